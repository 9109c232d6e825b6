"""Stochastic Latin Hypercube designs in the unit box."""

from __future__ import annotations

import numpy as np


def lhs(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Latin Hypercube Sample of ``n`` points in ``[0, 1)^d``.

    Each of the ``n`` equal-width strata of every dimension holds exactly one
    point; the position inside a stratum is uniform and the stratum order is
    an independent permutation per dimension.
    """
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    offsets = rng.random((n, d))
    strata = np.column_stack([rng.permutation(n) for _ in range(d)])
    points = (strata + offsets) / n
    # rounding at stratum edges can put floor(x * n) one cell off; nudge by ulps
    for _ in range(64):
        cell = np.floor(points * n)
        low, high = cell < strata, cell > strata
        if not (low.any() or high.any()):
            break
        points = np.where(low, np.nextafter(points, np.inf), points)
        points = np.where(high, np.nextafter(points, -np.inf), points)
    return points
