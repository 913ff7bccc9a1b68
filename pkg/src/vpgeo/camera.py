"""Pinhole intrinsics and vanishing-direction normalization.

All directions live in camera coordinates as unit vectors with a canonical
sign (largest-magnitude component positive), which resolves the +/-v
ambiguity of a vanishing direction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyList, ZeroDimension


@dataclass(frozen=True)
class Intrinsics:
    """Zero-skew pinhole intrinsics (pixels)."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def K(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array([
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]))


def sign_canonical(v: np.ndarray) -> np.ndarray:
    """Flip v so its largest-magnitude component is positive."""
    idx = int(np.abs(v).argmax())
    return -v if v[idx] < 0 else v


def unproject(vp2d, K: Intrinsics) -> np.ndarray:
    """Pixel point -> unit 3D ray direction, sign-canonicalized."""
    u, v = float(vp2d[0]), float(vp2d[1])
    d = np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])
    return sign_canonical(d / np.linalg.norm(d))


def unproject_h(vph: np.ndarray, K: Intrinsics) -> np.ndarray:
    """Homogeneous image point (x, y, w) -> unit direction; works at infinity."""
    x, y, w = float(vph[0]), float(vph[1]), float(vph[2])
    d = np.array([(x - K.cx * w) / K.fx, (y - K.cy * w) / K.fy, w])
    n = np.linalg.norm(d)
    if n == 0.0:
        raise ValueError("unproject_h: zero homogeneous point")
    return sign_canonical(d / n)


def project(v3d: np.ndarray, K: Intrinsics) -> np.ndarray:
    """Unit direction -> pixel point (requires nonzero depth component)."""
    p = K.K @ np.asarray(v3d, dtype=float)
    return p[:2] / p[2]


def reference_intrinsics(per_frame: list[Intrinsics]) -> Intrinsics:
    """Componentwise median over per-frame intrinsics."""
    if not per_frame:
        raise EmptyList("reference_intrinsics: empty intrinsics list")
    return Intrinsics(
        fx=float(np.median([k.fx for k in per_frame])),
        fy=float(np.median([k.fy for k in per_frame])),
        cx=float(np.median([k.cx for k in per_frame])),
        cy=float(np.median([k.cy for k in per_frame])),
    )


def rescale_intrinsics(k_ref: Intrinsics, from_size, to_size) -> Intrinsics:
    """Anisotropic rescale of paired intrinsics between resolutions."""
    w0, h0 = from_size
    w1, h1 = to_size
    if min(w0, h0, w1, h1) <= 0:
        raise ZeroDimension(f"rescale_intrinsics: sizes {from_size} -> {to_size}")
    sw, sh = w1 / w0, h1 / h0
    return Intrinsics(fx=sw * k_ref.fx, fy=sh * k_ref.fy, cx=sw * k_ref.cx, cy=sh * k_ref.cy)


def normalize_direction_real(vp2d, k_t: Intrinsics, k_ref: Intrinsics) -> np.ndarray:
    """Re-express a per-frame VP observation under the reference camera.

    The compensation chain K_ref^-1 K_t (K_t^-1 [u,v,1]) collapses to
    unprojection under K_ref; the products are kept explicit so the
    intent (and the matrix-product oracle in the tests) stays visible.
    """
    u, v = float(vp2d[0]), float(vp2d[1])
    ray_t = k_t.K_inv @ np.array([u, v, 1.0])
    d = (k_ref.K_inv @ k_t.K) @ ray_t
    return sign_canonical(d / np.linalg.norm(d))


def normalize_direction_real_h(vph: np.ndarray, k_t: Intrinsics, k_ref: Intrinsics) -> np.ndarray:
    """Homogeneous-point variant of normalize_direction_real."""
    d = (k_ref.K_inv @ k_t.K) @ (k_t.K_inv @ np.asarray(vph, dtype=float))
    n = np.linalg.norm(d)
    if n == 0.0:
        raise ValueError("normalize_direction_real_h: zero homogeneous point")
    return sign_canonical(d / n)


def normalize_direction_gen(vp2d, k_ref_gen: Intrinsics) -> np.ndarray:
    """Generated domain: direct unprojection under the paired reference."""
    return unproject(vp2d, k_ref_gen)


def outside_distance(vp2d, width: float, height: float) -> float:
    """Distance from a pixel point to the image rectangle, over the diagonal."""
    if width <= 0 or height <= 0:
        raise ZeroDimension(f"outside_distance: {width}x{height}")
    u, v = float(vp2d[0]), float(vp2d[1])
    dx = max(0.0, -u, u - width)
    dy = max(0.0, -v, v - height)
    return float(np.hypot(dx, dy) / np.hypot(width, height))
