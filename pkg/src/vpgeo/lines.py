"""2D line segments and a probabilistic-Hough segment detector."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ImageTooSmall


@dataclass
class LineSegment:
    x1: float
    y1: float
    x2: float
    y2: float

    def homogeneous(self) -> np.ndarray:
        """Line through both endpoints: l = p1 x p2, with l.p = 0 on the line."""
        p1 = np.array([self.x1, self.y1, 1.0])
        p2 = np.array([self.x2, self.y2, 1.0])
        return np.cross(p1, p2)

    @property
    def length(self) -> float:
        return float(np.hypot(self.x2 - self.x1, self.y2 - self.y1))

    @property
    def midpoint(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    @property
    def direction(self) -> np.ndarray:
        d = np.array([self.x2 - self.x1, self.y2 - self.y1])
        return d / np.linalg.norm(d)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass
class FrameLines:
    """Detected or ingested segments for one frame."""

    frame_index: int
    width: int
    height: int
    segments: list[LineSegment] = field(default_factory=list)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"frame size must be positive, got {self.width}x{self.height}")

    def __len__(self):
        return len(self.segments)

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))

    def endpoint_array(self) -> np.ndarray:
        """(n, 4) array of [x1, y1, x2, y2]."""
        if not self.segments:
            return np.zeros((0, 4))
        return np.array([s.as_list() for s in self.segments])

    def homogeneous_array(self) -> np.ndarray:
        """(n, 3) array of homogeneous line coefficients."""
        if not self.segments:
            return np.zeros((0, 3))
        return np.array([s.homogeneous() for s in self.segments])


@dataclass
class LineDetectConfig:
    edge_threshold: float = 0.1  # fraction of the max gradient magnitude
    min_segment_length: float = 12.0
    vote_fraction: float = 0.5
    min_votes: int = 8
    theta_bins: int = 180
    rho_res: float = 1.0
    collect_tol: float = 1.75
    max_gap: float = 4.0
    merge_angle_deg: float = 2.0
    merge_offset: float = 2.5
    merge_gap: float = 8.0
    max_lines: int = 64
    seed: int = 0


def _edge_points(image: np.ndarray, threshold_frac: float) -> np.ndarray:
    gx = ndimage.sobel(image, axis=1, mode="nearest")
    gy = ndimage.sobel(image, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 0:
        return np.zeros((0, 2))
    ys, xs = np.nonzero(mag >= threshold_frac * peak)
    return np.column_stack([xs, ys]).astype(float)


def _fit_line_tls(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Total-least-squares line fit; returns (centroid, unit direction)."""
    c = pts.mean(axis=0)
    d = pts - c
    cov = d.T @ d
    _, vecs = np.linalg.eigh(cov)
    direction = vecs[:, -1]  # largest eigenvalue
    return c, direction


def _robust_line(pts: np.ndarray, rng: np.random.Generator,
                 iters: int = 48, tol: float = 0.9) -> np.ndarray:
    """Consensus line on a point cluster: guards the fit against minority
    points donated by a nearby parallel edge. Returns the inlier mask."""
    n = len(pts)
    ia = rng.integers(0, n, size=iters)
    ib = (ia + 1 + rng.integers(0, n - 1, size=iters)) % n
    p = pts[ia]
    d = pts[ib] - p
    length = np.linalg.norm(d, axis=1)
    valid = length > 1e-9
    with np.errstate(invalid="ignore", divide="ignore"):
        normal = np.column_stack([-d[:, 1], d[:, 0]]) / length[:, None]
    dist = np.abs(np.einsum("knj,kj->kn", pts[None, :, :] - p[:, None, :], normal))
    counts = np.where(valid, (dist <= tol).sum(axis=1), -1)
    best = int(counts.argmax())
    if counts[best] < 2:
        return np.ones(n, dtype=bool)
    return dist[best] <= tol


def _gap_split(pts, centroid, direction, max_gap):
    """Index groups of points forming gap-bounded runs along the line."""
    t = (pts - centroid) @ direction
    order = np.argsort(t)
    ts = t[order]
    groups = []
    start = 0
    for i in range(1, len(ts) + 1):
        if i == len(ts) or ts[i] - ts[i - 1] > max_gap:
            groups.append(order[start:i])
            start = i
    return groups


def _runs_to_segments(pts, centroid, direction, min_len, max_gap, rng):
    """Split collected points into runs, then refine each run on its own
    points: consensus line, lateral trim, and a gap re-split. The trim keeps
    a run from overshooting past a corner onto a crossing edge."""
    segments = []
    for idx in _gap_split(pts, centroid, direction, max_gap):
        run = pts[idx]
        if len(run) < 2:
            continue
        keep = _robust_line(run, rng, tol=0.6)
        if keep.sum() >= 2:
            c2, d2 = _fit_line_tls(run[keep])
            nrm = np.array([-d2[1], d2[0]])
            keep = np.abs((run - c2) @ nrm) <= 0.7
        if keep.sum() < 2:
            continue
        c2, d2 = _fit_line_tls(run[keep])
        for sub in _gap_split(run[keep], c2, d2, max_gap):
            t = (run[keep][sub] - c2) @ d2
            lo, hi = t.min(), t.max()
            if hi - lo >= min_len:
                p1 = c2 + lo * d2
                p2 = c2 + hi * d2
                segments.append(LineSegment(p1[0], p1[1], p2[0], p2[1]))
    return segments


def _merge_collinear(segments: list[LineSegment], cfg: LineDetectConfig) -> list[LineSegment]:
    """Merge near-collinear, near-touching fragments (handles the double
    gradient ridge a thin stroke produces on both of its sides)."""
    cos_tol = np.cos(np.deg2rad(cfg.merge_angle_deg))
    merged = True
    segs = list(segments)
    while merged:
        merged = False
        out: list[LineSegment] = []
        used = [False] * len(segs)
        for i, a in enumerate(segs):
            if used[i]:
                continue
            pts = [np.array([a.x1, a.y1]), np.array([a.x2, a.y2])]
            for j in range(i + 1, len(segs)):
                if used[j]:
                    continue
                b = segs[j]
                if abs(float(a.direction @ b.direction)) < cos_tol:
                    continue
                cen, direc = _fit_line_tls(np.array([p for p in pts] + [[b.x1, b.y1], [b.x2, b.y2]]))
                normal = np.array([-direc[1], direc[0]])
                offs = [abs(float((p - cen) @ normal)) for p in pts]
                offs += [abs(float((np.array([b.x1, b.y1]) - cen) @ normal)),
                         abs(float((np.array([b.x2, b.y2]) - cen) @ normal))]
                if max(offs) > cfg.merge_offset:
                    continue
                ta = sorted(float((p - cen) @ direc) for p in pts)
                tb = sorted(float((np.array(q) - cen) @ direc) for q in ([b.x1, b.y1], [b.x2, b.y2]))
                gap = max(ta[0], tb[0]) - min(ta[-1], tb[-1])
                if gap > cfg.merge_gap:
                    continue
                lo = min(ta[0], tb[0])
                hi = max(ta[-1], tb[-1])
                p1 = cen + lo * direc
                p2 = cen + hi * direc
                pts = [p1, p2]
                a = LineSegment(p1[0], p1[1], p2[0], p2[1])
                used[j] = True
                merged = True
            out.append(a)
            used[i] = True
        segs = out
    return segs


def detect_line_segments(image: np.ndarray, cfg: LineDetectConfig | None = None,
                         frame_index: int = 0) -> FrameLines:
    """Detect line segments in a grayscale intensity grid.

    Sobel edge map thresholded at a fraction of its peak, probabilistic
    Hough voting over (theta, rho), per-peak point collection with a
    total-least-squares refit, gap-bounded run splitting, and a collinear
    merge pass.
    """
    cfg = cfg or LineDetectConfig()
    image = np.asarray(image, dtype=float)
    h, w = image.shape
    if w < 64 or h < 64:
        raise ImageTooSmall(f"need at least 64x64, got {w}x{h}")

    pts = _edge_points(image, cfg.edge_threshold)
    frame = FrameLines(frame_index=frame_index, width=w, height=h)
    if len(pts) == 0:
        return frame

    rng = np.random.default_rng(cfg.seed)
    thetas = np.linspace(0.0, np.pi, cfg.theta_bins, endpoint=False)
    cos_t, sin_t = np.cos(thetas), np.sin(thetas)
    diag = float(np.hypot(w, h))
    n_rho = int(2 * np.ceil(diag / cfg.rho_res)) + 1
    rho_offset = n_rho // 2

    n_votes = max(1, int(round(cfg.vote_fraction * len(pts))))
    voter_idx = rng.choice(len(pts), size=n_votes, replace=False)
    voters = pts[voter_idx]

    def vote_of(p: np.ndarray) -> np.ndarray:
        # rho bin per theta for a batch of points: (n_pts, n_theta)
        rho = np.outer(p[:, 0], cos_t) + np.outer(p[:, 1], sin_t)
        return np.round(rho / cfg.rho_res).astype(int) + rho_offset

    acc = np.zeros((cfg.theta_bins, n_rho), dtype=np.int64)
    bins = vote_of(voters)
    for ti in range(cfg.theta_bins):
        acc[ti] = np.bincount(bins[:, ti], minlength=n_rho)

    alive = np.ones(len(pts), dtype=bool)
    voter_alive_bins = bins  # parallel to voter_idx rows
    segments: list[LineSegment] = []

    for _ in range(cfg.max_lines):
        peak = acc.argmax()
        ti, ri = np.unravel_index(peak, acc.shape)
        if acc[ti, ri] < cfg.min_votes:
            break
        theta = thetas[ti]
        rho = (ri - rho_offset) * cfg.rho_res
        normal = np.array([np.cos(theta), np.sin(theta)])
        d = np.abs(pts @ normal - rho)
        near = alive & (d <= max(2.5, 1.5 * cfg.rho_res))
        if near.sum() >= 2:
            # consensus fit inside the quantized peak band, then a tight
            # re-collection around the fitted line
            consensus = _robust_line(pts[near], rng, tol=cfg.collect_tol / 2.0)
            cen, direc = _fit_line_tls(pts[near][consensus])
            nrm = np.array([-direc[1], direc[0]])
            near = alive & (np.abs((pts - cen) @ nrm) <= cfg.collect_tol)
        if near.sum() >= 2:
            cen, direc = _fit_line_tls(pts[near])
            segments.extend(_runs_to_segments(pts[near], cen, direc,
                                              cfg.min_segment_length, cfg.max_gap, rng))
        # retire collected points and their votes
        alive &= ~near
        near_voters = near[voter_idx]
        if near_voters.any():
            dead_bins = voter_alive_bins[near_voters]
            for tj in range(cfg.theta_bins):
                np.subtract.at(acc[tj], dead_bins[:, tj], 1)
            keep = ~near_voters
            voter_idx = voter_idx[keep]
            voter_alive_bins = voter_alive_bins[keep]
        else:
            acc[ti, ri] = 0  # spurious peak with no live voters

    segments = _merge_collinear(segments, cfg)
    segments = [s for s in segments if s.length >= cfg.min_segment_length]
    for s in segments:
        s.x1 = float(np.clip(s.x1, 0, w))
        s.y1 = float(np.clip(s.y1, 0, h))
        s.x2 = float(np.clip(s.x2, 0, w))
        s.y2 = float(np.clip(s.y2, 0, h))
    frame.segments = segments
    return frame
