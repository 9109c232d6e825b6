"""Benchmark problems on the unit box, with grid-oracle optima."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np


def xiong_variant(x, cos_scale: float = 2.5):
    """Non-stationary 1D test function on ``[0, 1]``.

    ``-0.5 * (sin(40 (x - 0.85)^4) cos(c (x - 0.95)) + 0.5 (x - 0.9) + 1)``
    with ``c = cos_scale``. It oscillates quickly near 0 and is almost
    flat near 1.
    """
    x = np.asarray(x, dtype=float)
    val = -0.5 * (np.sin(40.0 * (x - 0.85) ** 4) * np.cos(cos_scale * (x - 0.95)) + 0.5 * (x - 0.9) + 1.0)
    return float(val) if val.ndim == 0 else val


def quad_2d(x, y):
    val = (np.asarray(x, dtype=float) - 0.5) ** 2 + (np.asarray(y, dtype=float) - 0.5) ** 2
    return float(val) if np.ndim(val) == 0 else val


def _boundary(x):
    return 0.75 - 0.15 * np.sin(3.0 * np.pi * np.asarray(x, dtype=float))


def standin_constraint(x, y):
    """Discontinuous constraint: 0 on ``y >= b(x)``, else ``1 + b(x) - y``.

    ``b(x) = 0.75 - 0.15 sin(3 pi x)``. Values jump by at least 1 when
    crossing the boundary from the feasible side.
    """
    b = _boundary(x)
    y = np.asarray(y, dtype=float)
    val = np.where(y >= b, 0.0, 1.0 + (b - y))
    return float(val) if val.ndim == 0 else val


@dataclass(frozen=True)
class Problem:
    """A minimization problem on ``[0, 1]^dim``.

    ``objective`` and every entry of ``constraints`` map an ``(n, dim)``
    array to ``n`` values; a point is feasible iff all constraints are
    ``<= 0``. ``lower``/``upper`` describe the native box the unit box maps to.
    """

    name: str
    dim: int
    objective: Callable[[np.ndarray], np.ndarray]
    constraints: Tuple[Callable[[np.ndarray], np.ndarray], ...] = ()
    oracle_grid: int = 1_000_000
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def evaluate(self, X) -> Tuple[np.ndarray, np.ndarray]:
        """Objective ``(n,)`` and constraint values ``(n, n_constraints)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"{self.name} expects {self.dim}-dimensional points")
        f = np.asarray(self.objective(X), dtype=float).reshape(-1)
        g = np.column_stack([np.asarray(c(X), dtype=float).reshape(-1) for c in self.constraints]) if self.constraints else np.zeros((len(X), 0))
        return f, g

    def feasible(self, g: np.ndarray) -> np.ndarray:
        g = np.atleast_2d(g)
        return np.all(g <= 0.0, axis=1)

    def to_native(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.lower is None:
            return X
        return self.lower + X * (self.upper - self.lower)

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    @functools.cached_property
    def optimum(self) -> Tuple[float, np.ndarray]:
        """Best feasible value and location on a regular grid."""
        return grid_optimum(self)


def grid_optimum(problem: Problem, points: Optional[int] = None) -> Tuple[float, np.ndarray]:
    """Minimize over ``points`` regularly spaced values (per axis in 2D).

    In 1D ``points`` is the grid size; in 2D it is the per-axis count of a
    ``points x points`` grid. Defaults to ``problem.oracle_grid``.
    """
    n = points or problem.oracle_grid
    if problem.dim == 1:
        X = np.linspace(0.0, 1.0, n)[:, None]
        f, g = problem.evaluate(X)
        f = np.where(problem.feasible(g), f, np.inf)
        i = int(np.argmin(f))
        return float(f[i]), X[i]
    if problem.dim == 2:
        t = np.linspace(0.0, 1.0, n)
        best, arg = math.inf, None
        # row blocks keep memory bounded at large grids
        for start in range(0, n, 250):
            xx, yy = np.meshgrid(t[start : start + 250], t, indexing="ij")
            X = np.column_stack([xx.ravel(), yy.ravel()])
            f, g = problem.evaluate(X)
            f = np.where(problem.feasible(g), f, np.inf)
            i = int(np.argmin(f))
            if f[i] < best:
                best, arg = float(f[i]), X[i]
        return best, arg
    raise ValueError("grid oracle supports 1 or 2 dimensions")


def _xiong_problem(name: str, cos_scale: float) -> Problem:
    return Problem(name, 1, lambda X: xiong_variant(X[:, 0], cos_scale))


PROBLEMS: Dict[str, Problem] = {
    "xiong_1d": _xiong_problem("xiong_1d", 2.5),
    "xiong_1d_c2": _xiong_problem("xiong_1d_c2", 2.0),
    "constrained_2d": Problem(
        "constrained_2d",
        2,
        lambda X: quad_2d(X[:, 0], X[:, 1]),
        (lambda X: standin_constraint(X[:, 0], X[:, 1]),),
        oracle_grid=2000,
    ),
}


def get_problem(name: str) -> Problem:
    try:
        return PROBLEMS[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
