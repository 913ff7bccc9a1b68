"""Synthetic Manhattan-world sequences with known geometry.

A box room filled with axis-aligned line bundles is viewed by a camera on a
smooth spline trajectory. "Real-like" samples keep the smooth trajectory;
"generated-like" samples get a random-walk rotation/translation jitter,
reproducing temporally unstable geometry with physically coherent frames.
Every quantity is a deterministic function of (seed, config).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .camera import Intrinsics, rescale_intrinsics, sign_canonical
from .errors import CameraOutsideScene, IoError
from .features import GENERATED, REAL
from .lines import FrameLines, LineSegment


@dataclass
class SceneSpec:
    room: tuple[float, float, float] = (6.0, 4.0, 3.0)  # meters
    lines_per_axis: int = 60
    seed: int = 0

    def __post_init__(self):
        if min(self.room) <= 0:
            raise ValueError("room dimensions must be positive")
        if self.lines_per_axis < 10:
            raise ValueError("need at least 10 lines per axis")


@dataclass
class TrajectoryStyle:
    max_ang_vel_deg: float = 10.0  # per second
    max_trans_vel: float = 0.4     # m/s
    fps: float = 16.0


@dataclass
class JitterSpec:
    sigma_rot_deg: float = 2.0   # random-walk rotation increment per frame
    sigma_trans: float = 0.02    # random-walk translation increment (m)
    seg_dropout: float = 0.05
    sigma_px: float = 0.5
    mask_ratio: float = 0.0

    def __post_init__(self):
        if min(self.sigma_rot_deg, self.sigma_trans, self.seg_dropout, self.sigma_px) < 0:
            raise ValueError("jitter parameters must be nonnegative")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ValueError("mask_ratio must be in [0, 1]")
        if self.seg_dropout > 1.0:
            raise ValueError("seg_dropout must be <= 1")


@dataclass
class CameraTrajectory:
    rotations: np.ndarray  # (T, 3, 3) camera-to-world
    positions: np.ndarray  # (T, 3) camera centers (world, meters)
    fps: float

    @property
    def T(self) -> int:
        return len(self.rotations)


@dataclass
class SyntheticSample:
    frames: list[FrameLines]
    intrinsics: list[Intrinsics]
    gt_directions: np.ndarray  # (T, 3, 3), columns = scene axes in camera coords
    label: str


def stable_hash(*parts) -> int:
    """Platform-stable 63-bit hash of the stringified parts."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def _rodrigues(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    if theta < 1e-12:
        return np.eye(3)
    k = w / theta
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * K + (1 - np.cos(theta)) * (K @ K)


def _nearest_rotation(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


def geodesic_angle(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """Rotation angle (radians) between two orientation matrices."""
    c = (np.trace(r_a.T @ r_b) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def _rotation_from_angles(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Camera-to-world rotation: x right, y down, z forward; world z is up."""
    f = np.array([np.cos(pitch) * np.cos(yaw), np.cos(pitch) * np.sin(yaw), np.sin(pitch)])
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(f, up)
    n = np.linalg.norm(right)
    if n < 1e-9:  # looking straight up/down; pick an arbitrary right
        right = np.array([1.0, 0.0, 0.0])
    else:
        right = right / n
    down = np.cross(f, right)
    cr, sr = np.cos(roll), np.sin(roll)
    right_r = cr * right + sr * down
    down_r = -sr * right + cr * down
    return np.column_stack([right_r, down_r, f])


def _spline_curve(rng: np.random.Generator, T: int, center, scale) -> np.ndarray:
    """Low-frequency cubic-spline curve through random knots, shape (T, k)."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    scale = np.atleast_1d(np.asarray(scale, dtype=float))
    n_knots = max(4, T // 10 + 2)
    knots_t = np.linspace(0.0, max(T - 1, 1), n_knots)
    values = center + rng.normal(size=(n_knots, len(center))) * scale
    spline = CubicSpline(knots_t, values, bc_type="natural")
    return spline(np.arange(T, dtype=float))


def generate_trajectory(seed: int, T: int, style: TrajectoryStyle | None = None,
                        scene: SceneSpec | None = None) -> CameraTrajectory:
    """Smooth trajectory: spline yaw/pitch/roll and position, with the
    frame-to-frame rotation capped at max_ang_vel/fps."""
    if T < 2:
        raise ValueError(f"need T >= 2, got {T}")
    style = style or TrajectoryStyle()
    scene = scene or SceneSpec()
    rng = np.random.default_rng(seed)
    room = np.asarray(scene.room)

    center = room / 2.0
    positions = _spline_curve(rng, T, center=center, scale=room / 8.0)
    # aim across the body of the room, not at the nearest wall
    to_center = center[:2] - positions[0, :2]
    if np.linalg.norm(to_center) > 0.3:
        base_yaw = float(np.arctan2(to_center[1], to_center[0])) + rng.uniform(-0.7, 0.7)
    else:
        base_yaw = rng.uniform(0.0, 2.0 * np.pi)
    angles = _spline_curve(rng, T,
                           center=[base_yaw, 0.05, 0.0],
                           scale=[0.35, 0.15, 0.06])

    ang_cap = np.deg2rad(style.max_ang_vel_deg) / style.fps
    trans_cap = style.max_trans_vel / style.fps

    for _ in range(12):
        rots = [_rotation_from_angles(*a) for a in angles]
        steps = [geodesic_angle(rots[t - 1], rots[t]) for t in range(1, T)]
        worst = max(steps) if steps else 0.0
        if worst <= ang_cap + 1e-12:
            break
        shrink = 0.0 if worst == 0 else min(0.95, ang_cap / worst)
        angles = angles.mean(axis=0) + (angles - angles.mean(axis=0)) * shrink
    else:
        rots = [_rotation_from_angles(*a) for a in angles]

    pos_steps = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    worst = pos_steps.max() if len(pos_steps) else 0.0
    if worst > trans_cap:
        shrink = 0.0 if worst == 0 else trans_cap / worst
        positions = positions.mean(axis=0) + (positions - positions.mean(axis=0)) * shrink
    margin = 0.15 * room
    positions = np.clip(positions, margin, room - margin)

    return CameraTrajectory(rotations=np.array(rots), positions=positions, fps=style.fps)


def apply_jitter(traj: CameraTrajectory, spec: JitterSpec, seed: int) -> CameraTrajectory:
    """Compose each pose with a random-walk perturbation (the generated-video
    instability analog); rotations are re-orthonormalized."""
    rng = np.random.default_rng(seed)
    sigma = np.deg2rad(spec.sigma_rot_deg)
    walk = np.eye(3)
    offset = np.zeros(3)
    rots = []
    pos = []
    for t in range(traj.T):
        walk = walk @ _rodrigues(rng.normal(0.0, sigma, size=3) if sigma > 0 else np.zeros(3))
        offset = offset + (rng.normal(0.0, spec.sigma_trans, size=3)
                           if spec.sigma_trans > 0 else np.zeros(3))
        rots.append(_nearest_rotation(traj.rotations[t] @ walk))
        pos.append(traj.positions[t] + offset)
    return CameraTrajectory(rotations=np.array(rots), positions=np.array(pos), fps=traj.fps)


# -- scene ---------------------------------------------------------------------

def build_scene(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned line bundles: returns (segments (n, 2, 3), axis ids (n,))."""
    rng = np.random.default_rng(spec.seed)
    room = np.asarray(spec.room)
    segs = []
    axes = []
    pad = 0.05
    for axis in range(3):
        others = [i for i in range(3) if i != axis]
        for _ in range(spec.lines_per_axis):
            p0 = np.zeros(3)
            p1 = np.zeros(3)
            p0[axis] = pad * room[axis]
            p1[axis] = (1 - pad) * room[axis]
            for o in others:
                coord = rng.uniform(0.0, room[o])
                p0[o] = coord
                p1[o] = coord
            segs.append([p0, p1])
            axes.append(axis)
    return np.array(segs), np.array(axes)


def cube_edges(center, size: float) -> tuple[np.ndarray, np.ndarray]:
    """The 12 edges of an axis-aligned cube, as (12, 2, 3) plus axis ids."""
    c = np.asarray(center, dtype=float)
    h = size / 2.0
    corners = np.array([[sx, sy, sz] for sx in (-h, h) for sy in (-h, h) for sz in (-h, h)])
    segs = []
    axes = []
    for i in range(8):
        for j in range(i + 1, 8):
            diff = np.abs(corners[i] - corners[j])
            if np.count_nonzero(diff) == 1:
                segs.append([c + corners[i], c + corners[j]])
                axes.append(int(diff.argmax()))
    return np.array(segs), np.array(axes)


def _clip_2d(p0: np.ndarray, p1: np.ndarray, w: float, h: float):
    """Liang-Barsky clip of segment p0-p1 against [0,w] x [0,h]."""
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    for coord, lo, hi in ((0, 0.0, w), (1, 0.0, h)):
        if abs(d[coord]) < 1e-300:
            if p0[coord] < lo or p0[coord] > hi:
                return None
            continue
        ta = (lo - p0[coord]) / d[coord]
        tb = (hi - p0[coord]) / d[coord]
        ta, tb = min(ta, tb), max(ta, tb)
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 > t1:
            return None
    return p0 + t0 * d, p0 + t1 * d


def sample_mask_rect(rng: np.random.Generator, width: int, height: int,
                     ratio: float) -> tuple[float, float, float, float]:
    """Random rectangle covering `ratio` of the frame area: (x0, y0, x1, y1)."""
    aspect = np.exp(rng.uniform(np.log(0.6), np.log(1.0 / 0.6)))
    wf = float(np.sqrt(ratio * aspect))
    hf = float(np.sqrt(ratio / aspect))
    if wf > 1.0:
        wf, hf = 1.0, ratio
    if hf > 1.0:
        wf, hf = ratio, 1.0
    rw, rh = wf * width, hf * height
    x0 = rng.uniform(0.0, width - rw)
    y0 = rng.uniform(0.0, height - rh)
    return (x0, y0, x0 + rw, y0 + rh)


def mask_frame_segments(frame: FrameLines, ratio: float,
                        rng: np.random.Generator) -> FrameLines:
    """Remove segments whose midpoint falls inside a random block rectangle."""
    if ratio <= 0.0:
        return frame
    x0, y0, x1, y1 = sample_mask_rect(rng, frame.width, frame.height, ratio)
    kept = [s for s in frame.segments
            if not (x0 <= s.midpoint[0] <= x1 and y0 <= s.midpoint[1] <= y1)]
    return FrameLines(frame_index=frame.frame_index, width=frame.width,
                      height=frame.height, segments=kept)


def render_line_segments(
    scene: tuple[np.ndarray, np.ndarray],
    rotation: np.ndarray,
    position: np.ndarray,
    K: Intrinsics,
    width: int,
    height: int,
    jitter: JitterSpec | None = None,
    rng: np.random.Generator | None = None,
    frame_index: int = 0,
    room: tuple[float, float, float] | None = None,
    min_length_px: float = 12.0,
) -> tuple[FrameLines, np.ndarray]:
    """Project the scene's 3D segments into the frame; returns the surviving
    2D segments and the ground-truth direction matrix (columns = world axes
    in camera coordinates = rows of the camera-to-world rotation,
    sign-canonicalized)."""
    jitter = jitter or JitterSpec(sigma_rot_deg=0, sigma_trans=0, seg_dropout=0,
                                  sigma_px=0, mask_ratio=0)
    rng = rng if rng is not None else np.random.default_rng(0)
    if room is not None:
        r = np.asarray(room)
        if np.any(position < 0) or np.any(position > r):
            raise CameraOutsideScene(f"camera at {position} outside room {room}")

    segs3d, _ = scene
    r_wc = rotation.T  # world -> camera
    znear = 0.05
    out: list[LineSegment] = []
    for p0w, p1w in segs3d:
        a = r_wc @ (p0w - position)
        b = r_wc @ (p1w - position)
        if a[2] < znear and b[2] < znear:
            continue
        if a[2] < znear or b[2] < znear:
            t = (znear - a[2]) / (b[2] - a[2])
            if a[2] < znear:
                a = a + t * (b - a)
            else:
                b = a + t * (b - a)
        pa = np.array([K.fx * a[0] / a[2] + K.cx, K.fy * a[1] / a[2] + K.cy])
        pb = np.array([K.fx * b[0] / b[2] + K.cx, K.fy * b[1] / b[2] + K.cy])
        clipped = _clip_2d(pa, pb, width, height)
        if clipped is None:
            continue
        qa, qb = clipped
        if np.hypot(*(qb - qa)) < min_length_px:
            continue
        out.append(LineSegment(qa[0], qa[1], qb[0], qb[1]))

    if jitter.sigma_px > 0 and out:
        ends = np.array([s.as_list() for s in out])
        ends += rng.normal(0.0, jitter.sigma_px, size=ends.shape)
        ends[:, [0, 2]] = np.clip(ends[:, [0, 2]], 0.0, width)
        ends[:, [1, 3]] = np.clip(ends[:, [1, 3]], 0.0, height)
        out = [LineSegment(*e) for e in ends
               if np.hypot(e[2] - e[0], e[3] - e[1]) >= min_length_px]
    if jitter.seg_dropout > 0 and out:
        keep = rng.random(len(out)) >= jitter.seg_dropout
        out = [s for s, k in zip(out, keep) if k]
    frame = FrameLines(frame_index=frame_index, width=width, height=height, segments=out)
    if jitter.mask_ratio > 0:
        frame = mask_frame_segments(frame, jitter.mask_ratio, rng)

    gt = rotation.T.copy()
    for i in range(3):
        gt[:, i] = sign_canonical(gt[:, i])
    return frame, gt


def rasterize(frame: FrameLines, stroke: float = 0.0, background: float = 1.0) -> np.ndarray:
    """Draw segments into a grayscale grid (test support for the detector)."""
    img = np.full((frame.height, frame.width), background)
    for s in frame.segments:
        n = max(2, int(np.ceil(s.length / 0.25)))
        ts = np.linspace(0.0, 1.0, n)
        xs = np.clip(np.round(s.x1 + ts * (s.x2 - s.x1)).astype(int), 0, frame.width - 1)
        ys = np.clip(np.round(s.y1 + ts * (s.y2 - s.y1)).astype(int), 0, frame.height - 1)
        img[ys, xs] = stroke
    return img


# -- sample/dataset generation ---------------------------------------------------

REAL_SIZE = (640, 480)
GEN_SIZE = (960, 720)


def generate_sample(
    sample_seed: int,
    T: int,
    label: str,
    jitter: JitterSpec,
    scene_spec: SceneSpec | None = None,
    style: TrajectoryStyle | None = None,
) -> SyntheticSample:
    """One labeled sequence: real-like keeps the smooth trajectory, the
    generated-like twin is rendered at the paired (rescaled) resolution with
    a jittered trajectory."""
    scene_spec = scene_spec or SceneSpec(seed=sample_seed % (2**31))
    style = style or TrajectoryStyle()
    scene = build_scene(scene_spec)
    traj = generate_trajectory(sample_seed, T, style, scene_spec)
    rng = np.random.default_rng(stable_hash(sample_seed, "render"))

    w, h = REAL_SIZE
    base = Intrinsics(
        fx=0.9 * w + (sample_seed % 97) - 48.0,
        fy=0.9 * w + (sample_seed % 89) - 44.0,
        cx=w / 2.0 + (sample_seed % 13) - 6.0,
        cy=h / 2.0 + (sample_seed % 11) - 5.0,
    )

    if label == REAL:
        intr = [Intrinsics(fx=base.fx + rng.normal(0, 2.0), fy=base.fy + rng.normal(0, 2.0),
                           cx=base.cx, cy=base.cy) for _ in range(T)]
        render_jitter = JitterSpec(sigma_rot_deg=0, sigma_trans=0,
                                   seg_dropout=jitter.seg_dropout,
                                   sigma_px=jitter.sigma_px,
                                   mask_ratio=jitter.mask_ratio)
    elif label == GENERATED:
        traj = apply_jitter(traj, jitter, stable_hash(sample_seed, "jitter"))
        w, h = GEN_SIZE
        k_gen = rescale_intrinsics(base, REAL_SIZE, GEN_SIZE)
        scale = GEN_SIZE[0] / REAL_SIZE[0]
        intr = [k_gen] * T
        render_jitter = JitterSpec(sigma_rot_deg=0, sigma_trans=0,
                                   seg_dropout=jitter.seg_dropout,
                                   sigma_px=jitter.sigma_px * scale,
                                   mask_ratio=jitter.mask_ratio)
    else:
        raise ValueError(f"unknown label {label!r}")

    frames = []
    gts = []
    for t in range(T):
        frame, gt = render_line_segments(
            scene, traj.rotations[t], traj.positions[t], intr[t], w, h,
            jitter=render_jitter, rng=rng, frame_index=t, room=scene_spec.room)
        frames.append(frame)
        gts.append(gt)
    return SyntheticSample(frames=frames, intrinsics=intr,
                           gt_directions=np.array(gts), label=label)


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def write_sample(sample: SyntheticSample, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "segments.jsonl").open("w") as fh:
        for frame in sample.frames:
            fh.write(json.dumps({
                "frame": frame.frame_index,
                "width": frame.width,
                "height": frame.height,
                "segments": [s.as_list() for s in frame.segments],
            }, sort_keys=True) + "\n")
    if sample.label == REAL:
        _dump_json(directory / "intrinsics.json",
                   {"frames": [k.to_dict() for k in sample.intrinsics]})
    else:
        _dump_json(directory / "intrinsics.json", sample.intrinsics[0].to_dict())
    _dump_json(directory / "gt_directions.json",
               {"gt_directions": [g.tolist() for g in sample.gt_directions]})


def _split_assignments(ids: list[str], seed: int,
                       fracs: tuple[float, float, float]) -> dict[str, str]:
    """Seed-stable split: rank ids by hash, allocate exact largest-remainder
    counts for train/val/test."""
    n = len(ids)
    raw = [f * n for f in fracs]
    counts = [int(np.floor(r)) for r in raw]
    rema = [r - c for r, c in zip(raw, counts)]
    for i in np.argsort(rema)[::-1]:
        if sum(counts) >= n:
            break
        counts[int(i)] += 1
    counts[2] = n - counts[0] - counts[1]
    ranked = sorted(ids, key=lambda s: stable_hash(seed, s, "split"))
    names = ["train"] * counts[0] + ["val"] * counts[1] + ["test"] * counts[2]
    return dict(zip(ranked, names))


def make_dataset(
    out_dir,
    n_real: int,
    n_generated: int,
    T: int,
    seed: int,
    jitter: JitterSpec | None = None,
    scene_spec: SceneSpec | None = None,
    style: TrajectoryStyle | None = None,
    split_fracs: tuple[float, float, float] = (0.70, 0.15, 0.15),
) -> dict:
    """Write a labeled synthetic dataset plus manifest; fully determined by
    (seed, config). Splits are stratified per class."""
    if n_real < 1 or n_generated < 1:
        raise ValueError("need at least one sample of each class")
    if T < 2:
        raise ValueError("need T >= 2")
    jitter = jitter or JitterSpec()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(str(e)) from e

    records = []
    specs = ([(f"real_{i:04d}", REAL) for i in range(n_real)]
             + [(f"gen_{i:04d}", GENERATED) for i in range(n_generated)])
    split_real = _split_assignments([s for s, lb in specs if lb == REAL], seed, split_fracs)
    split_gen = _split_assignments([s for s, lb in specs if lb == GENERATED], seed, split_fracs)
    splits = {**split_real, **split_gen}

    for sid, label in specs:
        sample_seed = stable_hash(seed, sid)
        sample = generate_sample(sample_seed, T, label, jitter,
                                 scene_spec=scene_spec, style=style)
        sample_dir = out / sid
        try:
            write_sample(sample, sample_dir)
        except OSError as e:
            raise IoError(str(e)) from e
        records.append({"id": sid, "label": label, "split": splits[sid], "path": sid})

    manifest = {
        "samples": records,
        "seed": seed,
        "T": T,
        "jitter": asdict(jitter),
    }
    try:
        _dump_json(out / "manifest.json", manifest)
    except OSError as e:
        raise IoError(str(e)) from e
    return manifest
