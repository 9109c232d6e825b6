"""Ordinary Kriging: profiled-trend marginal likelihood, CMA-ES training, prediction."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kernels import ArdPExpKernel, ArdSqExpKernel, KnotMapping, MappedKernel
from .numerics import NotPositiveDefinite, SpdFactor, cholesky, mvn_logpdf
from .optimizers import SearchSpace, cmaes

logger = logging.getLogger(__name__)


class DegenerateDataWarning(UserWarning):
    """All responses are identical; a constant model is returned."""


@dataclass(frozen=True)
class Dataset:
    """Design points in the unit box and their responses."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} points but {y.shape[0]} responses")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class GpTrainConfig:
    budget: int = 3000
    restarts: int = 2
    log_variance_bounds: tuple = (-6.0, 6.0)
    rate_bounds: tuple = (1e-2, 1e3)
    noise_bounds: tuple = (1e-10, 1.0)
    density_bounds: tuple = (1e-3, 1e3)
    power_bounds: tuple = (1.0, 2.0)


@dataclass(frozen=True)
class GpModel:
    """A trained ordinary-Kriging model, hyperparameters in response units.

    ``factor`` holds the Cholesky factor of ``K + noise * I`` and ``alpha``
    the solve ``(K + noise * I)^{-1} (y - mu)``.
    """

    X: np.ndarray
    y: np.ndarray
    kernel: object
    mu: float
    noise: float
    factor: SpdFactor = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    log_marginal: float = math.nan
    degenerate: bool = False

    @classmethod
    def build(cls, X, y, kernel, noise: float, mu: Optional[float] = None, **extra) -> "GpModel":
        """Factorize and cache; ``mu=None`` profiles the trend analytically."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        C = kernel.gram(X) + noise * np.eye(len(y))
        factor = cholesky(C)
        if mu is None:
            mu = profiled_trend(factor, y)
        alpha = factor.solve(y - mu)
        lml = mvn_logpdf(y, np.full_like(y, mu), factor)
        return cls(X, y, kernel, float(mu), float(noise), factor, alpha, lml, **extra)

    @property
    def variance(self) -> float:
        return self.kernel.variance


def profiled_trend(factor: SpdFactor, y: np.ndarray) -> float:
    ones = np.ones_like(y)
    Ci1 = factor.solve(ones)
    return float(Ci1 @ y / (Ci1 @ ones))


def neg_log_marginal(kernel, mu: Optional[float], noise: float, X, y) -> float:
    """``-log N(y | mu 1, K + noise I)``; ``+inf`` if the covariance is not SPD.

    ``mu=None`` substitutes the generalized-least-squares trend.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    try:
        factor = cholesky(kernel.gram(X) + noise * np.eye(len(y)))
    except NotPositiveDefinite:
        return math.inf
    if mu is None:
        mu = profiled_trend(factor, y)
    return -mvn_logpdf(y, np.full_like(y, mu), factor)


class _Layout:
    """Flat hyperparameter vector <-> kernel objects (standardized units)."""

    def __init__(self, dim: int, family: str, knots: int, cfg: GpTrainConfig):
        self.dim, self.family, self.knots = dim, family, knots
        lo, hi, scales = [], [], []

        def add(count, bounds, scale):
            lo.extend([bounds[0]] * count)
            hi.extend([bounds[1]] * count)
            scales.extend([scale] * count)

        add(1, tuple(math.exp(b) for b in cfg.log_variance_bounds), "log")
        add(dim, cfg.rate_bounds, "log")
        if family in ("pexp", "nlgp"):
            add(dim, cfg.power_bounds, "linear")
        add(1, cfg.noise_bounds, "log")
        if family == "nlgp":
            add(dim * knots, cfg.density_bounds, "log")
        self.space = SearchSpace(lo, hi, scales)

    def unpack(self, v: np.ndarray):
        d = self.dim
        variance, rates = v[0], v[1 : 1 + d]
        i = 1 + d
        if self.family == "sqexp":
            base = ArdSqExpKernel(variance, rates)
        else:
            base = ArdPExpKernel(variance, rates, v[i : i + d])
            i += d
        noise = v[i]
        i += 1
        if self.family == "nlgp":
            dens = v[i : i + d * self.knots].reshape(d, self.knots)
            return MappedKernel(base, KnotMapping(dens)), noise
        return base, noise

    def pack(self, kernel, noise: float) -> np.ndarray:
        base = kernel.kernel if isinstance(kernel, MappedKernel) else kernel
        parts = [[base.variance], base.rates]
        if self.family != "sqexp":
            parts.append(base.powers)
        parts.append([noise])
        if self.family == "nlgp":
            parts.append(np.concatenate(kernel.mapping.densities))
        v = np.concatenate([np.asarray(p, dtype=float) for p in parts])
        return np.clip(v, self.space.lower, self.space.upper)


def _rescale_kernel(kernel, factor: float):
    """Multiply the process variance by ``factor``."""
    if isinstance(kernel, MappedKernel):
        return MappedKernel(_rescale_kernel(kernel.kernel, factor), kernel.mapping)
    if isinstance(kernel, ArdSqExpKernel):
        return ArdSqExpKernel(kernel.variance * factor, kernel.rates)
    return ArdPExpKernel(kernel.variance * factor, kernel.rates, kernel.powers)


def fit_gp(
    data: Dataset,
    family: str = "pexp",
    knots: int = 4,
    config: GpTrainConfig = GpTrainConfig(),
    rng: Optional[np.random.Generator] = None,
    warm_start: Optional[GpModel] = None,
) -> GpModel:
    """Train an ordinary-Kriging model by CMA-ES on the marginal likelihood.

    Parameters
    ----------
    data : Dataset
        At least two points.
    family : {"pexp", "sqexp", "nlgp"}
        ARD p-exponential, ARD Gaussian, or p-exponential on knot-warped
        inputs with ``knots`` density values per dimension.
    warm_start : GpModel, optional
        Previous model of the same family; its hyperparameters seed the
        first CMA-ES run.

    Responses are standardized for the search; the returned model carries
    hyperparameters in the original response units, which leaves the
    posterior unchanged.
    """
    if family not in ("pexp", "sqexp", "nlgp"):
        raise ValueError(f"unknown kernel family {family!r}")
    if data.n < 2:
        raise ValueError("Kriging needs at least 2 points")
    rng = np.random.default_rng() if rng is None else rng
    X, y = data.X, data.y
    y_mean, y_std = float(np.mean(y)), float(np.std(y))
    layout = _Layout(data.dim, family, knots, config)

    if y_std == 0.0:
        warnings.warn("all responses identical; returning a constant model", DegenerateDataWarning)
        kernel, _ = layout.unpack(layout.space.lower.copy())
        kernel = _rescale_kernel(kernel, 1e-10 / kernel.variance)
        return GpModel.build(X, y, kernel, 0.0, mu=y_mean, degenerate=True)

    ys = (y - y_mean) / y_std

    def objective(v):
        kernel, noise = layout.unpack(v)
        return neg_log_marginal(kernel, None, noise, X, ys)

    x0 = None
    if warm_start is not None:
        k_prev = _rescale_kernel(warm_start.kernel, 1.0 / y_std**2)
        x0 = layout.pack(k_prev, warm_start.noise / y_std**2)
    best, _ = cmaes(objective, layout.space, budget=config.budget, restarts=config.restarts, rng=rng, x0=x0)
    kernel, noise = layout.unpack(best)
    return GpModel.build(X, y, _rescale_kernel(kernel, y_std**2), noise * y_std**2)


def predict_gp(model: GpModel, x):
    """Predictive mean and variance of the noisy response at ``x``.

    ``x`` may be one point ``(d,)`` (scalars returned) or a batch ``(n, d)``.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    Xs = np.atleast_2d(x)
    Ks = model.kernel.gram(model.X, Xs)
    mean = model.mu + Ks.T @ model.alpha
    v = model.factor.solve_lower(Ks)
    var = model.kernel.diag(Xs) - np.sum(v * v, axis=0) + model.noise
    var = np.maximum(var, 0.0)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var
