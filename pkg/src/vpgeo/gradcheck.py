"""Central finite-difference gradient oracle."""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteValue


def finite_difference_gradient(
    f: Callable[[], float],
    params: Sequence[np.ndarray],
    h: float = 1e-6,
) -> list[np.ndarray]:
    """Estimate df/dp by central differences, one coordinate at a time.

    ``f`` must be a deterministic scalar function of the arrays in ``params``,
    which are perturbed in place and restored. Returns one gradient array per
    parameter.
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    grads = []
    for p in params:
        g = np.zeros(p.size)
        for i in range(p.size):
            orig = p.flat[i]
            p.flat[i] = orig + h
            fp = float(f())
            p.flat[i] = orig - h
            fm = float(f())
            p.flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NonFiniteValue("finite_difference_gradient: non-finite evaluation")
            g[i] = (fp - fm) / (2.0 * h)
        grads.append(g.reshape(p.shape))
    return grads


def max_relative_error(
    analytic: Sequence[np.ndarray],
    numeric: Sequence[np.ndarray],
    floor: float = 1e-6,
) -> float:
    """Largest |a - n| / max(|a|, |n|, floor) over all coordinates."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
