"""Sequential RANSAC estimation of three orthogonal vanishing points."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import Intrinsics, outside_distance, sign_canonical, unproject_h
from .errors import NoLines
from .lines import FrameLines


@dataclass
class RansacConfig:
    iterations: int = 500
    inlier_tol_deg: float = 2.0
    orth_tol_deg: float = 10.0
    min_support: int = 5
    seed: int = 0


@dataclass
class VanishingPointEstimate:
    """Up to three vanishing points in discovery order.

    vp3d holds unit direction columns; vph the homogeneous image points
    (rows), which stay well defined for directions parallel to the image
    plane. Invisible slots are zeroed with m = 0.
    """

    vp2d: np.ndarray  # (3, 2) pixels (guarded dehomogenization)
    vp3d: np.ndarray  # (3, 3) unit columns
    vph: np.ndarray   # (3, 3) homogeneous points, one per row
    d: np.ndarray     # (3,) diagonal-normalized outside distances
    m: np.ndarray     # (3,) visibility flags in {0, 1}
    assignments: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def n_visible(self) -> int:
        return int(self.m.sum())


def dehomogenize_guarded(vph: np.ndarray) -> np.ndarray:
    """Image point of a homogeneous VP; points at infinity map to a far
    finite stand-in along their direction (consumers clamp anyway)."""
    x, y, w = float(vph[0]), float(vph[1]), float(vph[2])
    s = max(np.hypot(x, y), 1e-300)
    if abs(w) <= 1e-12 * max(s, 1.0):
        return np.array([x, y]) * (1e12 / s)
    return np.array([x / w, y / w])


def _inlier_matrix(cands: np.ndarray, mids: np.ndarray, dirs: np.ndarray,
                   cos_tol: float) -> np.ndarray:
    """Boolean (n_candidates, n_segments): segment direction within the
    angular tolerance of the direction from its midpoint to the VP."""
    ux = cands[:, 0:1] - cands[:, 2:3] * mids[None, :, 0]
    uy = cands[:, 1:2] - cands[:, 2:3] * mids[None, :, 1]
    norm = np.hypot(ux, uy)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = np.abs(ux * dirs[None, :, 0] + uy * dirs[None, :, 1]) / norm
    return (cosang >= cos_tol) | (norm <= 1e-9)


def estimate_vanishing_points(frame: FrameLines, K: Intrinsics,
                              cfg: RansacConfig | None = None) -> VanishingPointEstimate:
    """Sequential RANSAC: hypothesize VPs from line pairs, score by angular
    consistency, enforce orthogonality (in calibrated space) against already
    accepted VPs, refine each winner by least squares over its inliers, and
    remove inliers before the next round.
    """
    cfg = cfg or RansacConfig()
    n = len(frame)
    if n == 0:
        raise NoLines("no segments in frame")

    ends = frame.endpoint_array()
    mids = 0.5 * (ends[:, 0:2] + ends[:, 2:4])
    dvec = ends[:, 2:4] - ends[:, 0:2]
    dirs = dvec / np.linalg.norm(dvec, axis=1, keepdims=True)
    lines = frame.homogeneous_array()
    # scale so |l . (u,v,1)| is the pixel distance from the line
    lines = lines / np.linalg.norm(lines[:, :2], axis=1, keepdims=True)

    rng = np.random.default_rng(cfg.seed)
    cos_tol = np.cos(np.deg2rad(cfg.inlier_tol_deg))
    sin_orth = np.sin(np.deg2rad(cfg.orth_tol_deg))

    active = np.ones(n, dtype=bool)
    assignments = np.full(n, -1, dtype=int)
    found: list[np.ndarray] = []      # homogeneous VPs
    found_dirs: list[np.ndarray] = []  # calibrated unit directions

    for vp_index in range(3):
        act_idx = np.nonzero(active)[0]
        n_act = len(act_idx)
        if n_act < 2:
            break
        ia = act_idx[rng.integers(0, n_act, size=cfg.iterations)]
        shift = 1 + rng.integers(0, n_act - 1, size=cfg.iterations)
        ib = act_idx[(np.searchsorted(act_idx, ia) + shift) % n_act]

        cands = np.cross(lines[ia], lines[ib])
        norms = np.linalg.norm(cands, axis=1)
        valid = norms > 1e-12
        cands = np.where(valid[:, None], cands / np.maximum(norms, 1e-300)[:, None], 0.0)

        if found_dirs:
            cal = K.K_inv @ cands.T  # (3, iters)
            cal /= np.maximum(np.linalg.norm(cal, axis=0), 1e-300)
            for u in found_dirs:
                valid &= np.abs(u @ cal) <= sin_orth

        if not np.any(valid):
            break
        inl = _inlier_matrix(cands, mids, dirs, cos_tol)
        inl &= active[None, :]
        inl &= valid[:, None]
        counts = inl.sum(axis=1)
        best = int(counts.argmax())
        if counts[best] < cfg.min_support:
            break

        vp = cands[best]
        support = inl[best]
        # least-squares refinement over the inlier lines
        _, _, vt = np.linalg.svd(lines[support], full_matrices=False)
        refined = vt[-1]
        refined /= np.linalg.norm(refined)
        ref_inl = _inlier_matrix(refined[None, :], mids, dirs, cos_tol)[0] & active
        ref_dir = unproject_h(refined, K)
        ortho_ok = all(abs(float(u @ ref_dir)) <= sin_orth for u in found_dirs)
        if ref_inl.sum() >= cfg.min_support and ortho_ok:
            vp, support = refined, ref_inl

        assignments[support] = vp_index
        active &= ~support
        found.append(vp)
        found_dirs.append(unproject_h(vp, K))

    vp2d = np.zeros((3, 2))
    vp3d = np.zeros((3, 3))
    vph = np.zeros((3, 3))
    d = np.zeros(3)
    m = np.zeros(3)
    for i, hv in enumerate(found):
        vph[i] = hv
        vp2d[i] = dehomogenize_guarded(hv)
        vp3d[:, i] = sign_canonical(found_dirs[i])
        d[i] = outside_distance(vp2d[i], frame.width, frame.height)
        m[i] = 1.0
    return VanishingPointEstimate(vp2d=vp2d, vp3d=vp3d, vph=vph, d=d, m=m,
                                  assignments=assignments)
