"""Gradient-free optimizers: CMA-ES for model training, DE for infill search.

Both work internally on the unit cube obtained by an affine (``linear``) or
log-affine (``log``) map of each parameter's bounds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class AllEvaluationsInvalid(RuntimeError):
    """Every candidate evaluated by an optimizer returned a non-finite value."""


@dataclass(frozen=True)
class SearchSpace:
    """Box bounds with a per-parameter ``linear`` or ``log`` scale tag."""

    lower: np.ndarray
    upper: np.ndarray
    scales: tuple

    def __init__(self, lower, upper, scales: Optional[Sequence[str]] = None):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape:
            raise ValueError("lower and upper bounds differ in shape")
        if scales is None:
            scales = ("linear",) * lower.size
        scales = tuple(scales)
        if len(scales) != lower.size or any(s not in ("linear", "log") for s in scales):
            raise ValueError("scales must be 'linear' or 'log' per parameter")
        if np.any(lower >= upper):
            raise ValueError("every lower bound must be below its upper bound")
        is_log = np.array([s == "log" for s in scales])
        if np.any(lower[is_log] <= 0):
            raise ValueError("log-scaled bounds must be strictly positive")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "scales", scales)

    @classmethod
    def unit(cls, dim: int) -> "SearchSpace":
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def _is_log(self) -> np.ndarray:
        return np.array([s == "log" for s in self.scales])

    def _tlo_thi(self):
        lo, hi = self.lower.copy(), self.upper.copy()
        m = self._is_log
        lo[m], hi[m] = np.log(lo[m]), np.log(hi[m])
        return lo, hi

    def to_unit(self, x: np.ndarray) -> np.ndarray:
        x = np.array(x, dtype=float)
        m = self._is_log
        x[..., m] = np.log(x[..., m])
        lo, hi = self._tlo_thi()
        return (x - lo) / (hi - lo)

    def from_unit(self, u: np.ndarray) -> np.ndarray:
        lo, hi = self._tlo_thi()
        x = lo + np.asarray(u, dtype=float) * (hi - lo)
        m = self._is_log
        x[..., m] = np.exp(x[..., m])
        # exp/log round trip can step just outside the box
        return np.clip(x, self.lower, self.upper)


def _reflect(u: np.ndarray) -> np.ndarray:
    u = np.mod(u, 2.0)
    return np.where(u > 1.0, 2.0 - u, u)


def _safe_eval(objective, x) -> float:
    try:
        v = float(objective(x))
    except (ArithmeticError, ValueError, np.linalg.LinAlgError):
        return math.inf
    return v if math.isfinite(v) else math.inf


def cmaes(
    objective: Callable[[np.ndarray], float],
    space: SearchSpace,
    budget: int = 3000,
    restarts: int = 2,
    rng: Optional[np.random.Generator] = None,
    x0: Optional[np.ndarray] = None,
    sigma0: float = 0.3,
    popsize: Optional[int] = None,
    tolx: float = 1e-11,
    tolfun: float = 1e-12,
):
    """Minimize ``objective`` over ``space`` with (mu/mu_w, lambda)-CMA-ES.

    The first run starts from ``x0`` (or a uniform draw), later restarts
    from fresh uniform draws once a run stagnates, until ``budget``
    evaluations are spent. Samples leaving the box are reflected back.

    Returns
    -------
    best_x, best_value
        Best point ever evaluated and its objective value.
    """
    rng = np.random.default_rng() if rng is None else rng
    n = space.dim
    lam = popsize or 4 + int(3 * math.log(n))
    if budget < lam:
        raise ValueError(f"budget {budget} is smaller than the population {lam}")
    mu = lam // 2
    weights = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    weights /= weights.sum()
    mueff = 1.0 / float(np.sum(weights**2))
    cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    cs = (mueff + 2) / (n + mueff + 5)
    c1 = 2 / ((n + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + cs
    chin = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

    best_x, best_f = None, math.inf
    evals = 0
    if x0 is not None:
        # the seed itself competes, so a warm start is never worse than its seed
        best_x = space.from_unit(np.clip(space.to_unit(x0), 0.0, 1.0))
        best_f = _safe_eval(objective, best_x)
        evals = 1
    run = 0
    while evals + lam <= budget and run <= restarts:
        if run == 0 and x0 is not None:
            mean = np.clip(space.to_unit(x0), 0.0, 1.0)
        else:
            mean = rng.random(n)
        sigma = sigma0
        C = np.eye(n)
        B, D = np.eye(n), np.ones(n)
        pc, ps = np.zeros(n), np.zeros(n)
        history: list[float] = []
        gen = 0
        while evals + lam <= budget:
            z = rng.standard_normal((lam, n))
            u = _reflect(mean + sigma * (z * D) @ B.T)
            xs = space.from_unit(u)
            f = np.array([_safe_eval(objective, x) for x in xs])
            evals += lam
            order = np.argsort(f, kind="stable")
            if f[order[0]] < best_f:
                best_f, best_x = float(f[order[0]]), xs[order[0]].copy()
            elif best_x is None:
                best_x = xs[order[0]].copy()

            old = mean
            sel = u[order[:mu]]
            mean = weights @ sel
            y = (sel - old) / sigma
            ymean = (mean - old) / sigma
            invsqrt = (B / D) @ B.T
            ps = (1 - cs) * ps + math.sqrt(cs * (2 - cs) * mueff) * invsqrt @ ymean
            gen += 1
            hsig = np.linalg.norm(ps) / math.sqrt(1 - (1 - cs) ** (2 * gen)) / chin < 1.4 + 2 / (n + 1)
            pc = (1 - cc) * pc + hsig * math.sqrt(cc * (2 - cc) * mueff) * ymean
            C = (
                (1 - c1 - cmu) * C
                + c1 * (np.outer(pc, pc) + (1 - hsig) * cc * (2 - cc) * C)
                + cmu * (y.T * weights) @ y
            )
            sigma *= math.exp(min(1.0, (cs / damps) * (np.linalg.norm(ps) / chin - 1)))
            C = np.triu(C) + np.triu(C, 1).T
            evals_d, B = np.linalg.eigh(C)
            D = np.sqrt(np.maximum(evals_d, 1e-30))

            finite = f[np.isfinite(f)]
            history.append(float(finite.min()) if finite.size else math.inf)
            hist = history[-(10 + int(30 * n / lam)):]
            flat = len(history) > 10 and np.isfinite(hist).all() and max(hist) - min(hist) < tolfun
            if sigma * D.max() < tolx or flat or D.max() > 1e7 * D.min():
                break
        run += 1

    if not math.isfinite(best_f):
        raise AllEvaluationsInvalid(f"no finite objective value in {evals} evaluations")
    return best_x, best_f


def differential_evolution(
    objective: Callable,
    space: SearchSpace,
    pop: int = 40,
    generations: int = 150,
    rng: Optional[np.random.Generator] = None,
    vectorized: bool = False,
    F: float = 0.8,
    CR: float = 0.9,
    init: Optional[np.ndarray] = None,
):
    """Maximize ``objective`` with DE/rand/1/bin, clipping trials to the box.

    With ``vectorized=True`` the objective receives a ``(pop, dim)`` array and
    must return ``pop`` values. ``init`` optionally replaces the uniform
    initial population (rows beyond ``pop`` are ignored, missing rows drawn).
    """
    if pop < 4:
        raise ValueError("differential evolution needs pop >= 4")
    rng = np.random.default_rng() if rng is None else rng
    n = space.dim

    def evaluate(U: np.ndarray) -> np.ndarray:
        X = space.from_unit(U)
        if vectorized:
            try:
                vals = np.asarray(objective(X), dtype=float).reshape(len(X))
            except (ArithmeticError, ValueError, np.linalg.LinAlgError):
                vals = np.full(len(X), -math.inf)
        else:
            vals = np.array([-_safe_eval(lambda x: -objective(x), x) for x in X])
        return np.where(np.isfinite(vals), vals, -math.inf)

    U = rng.random((pop, n))
    if init is not None:
        seed = np.clip(space.to_unit(np.atleast_2d(init))[:pop], 0.0, 1.0)
        U[: len(seed)] = seed
    fit = evaluate(U)
    b = int(np.argmax(fit))
    best_u, best_f = U[b].copy(), float(fit[b])

    idx = np.arange(pop)
    for _ in range(generations):
        # three distinct donors, all different from the target
        keys = rng.random((pop, pop))
        keys[idx, idx] = np.inf
        r = np.argsort(keys, axis=1)[:, :3]
        mutant = U[r[:, 0]] + F * (U[r[:, 1]] - U[r[:, 2]])
        cross = rng.random((pop, n)) < CR
        cross[idx, rng.integers(0, n, pop)] = True
        trial = np.clip(np.where(cross, mutant, U), 0.0, 1.0)
        tfit = evaluate(trial)
        better = tfit >= fit
        U[better], fit[better] = trial[better], tfit[better]
        b = int(np.argmax(fit))
        if fit[b] > best_f:
            best_u, best_f = U[b].copy(), float(fit[b])

    if not math.isfinite(best_f):
        raise AllEvaluationsInvalid("no finite objective value in the DE population")
    return space.from_unit(best_u), best_f
