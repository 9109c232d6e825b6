"""Covariance functions and the knot-density input mapping.

Kernels follow ``k(x, x') = l * exp(-sum_i theta_i |x_i - x'_i|^p_i)`` where
``l`` is the process variance and ``theta_i`` the per-dimension rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np


def _as_2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[None, :] if X.ndim == 1 else X


@dataclass(frozen=True)
class ArdPExpKernel:
    """ARD p-exponential kernel with exponents ``p_i`` in ``[1, 2]``."""

    variance: float
    rates: np.ndarray
    powers: np.ndarray

    def __post_init__(self):
        rates = np.atleast_1d(np.asarray(self.rates, dtype=float))
        powers = np.broadcast_to(np.asarray(self.powers, dtype=float), rates.shape).copy()
        if self.variance <= 0 or np.any(rates <= 0):
            raise ValueError("variance and rates must be positive")
        if np.any(powers < 1.0) or np.any(powers > 2.0):
            raise ValueError("powers must lie in [1, 2]")
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "powers", powers)

    @property
    def dim(self) -> int:
        return self.rates.shape[0]

    def gram(self, X, X2=None) -> np.ndarray:
        X = _as_2d(X)
        X2 = X if X2 is None else _as_2d(X2)
        if X.shape[1] != self.dim or X2.shape[1] != self.dim:
            raise ValueError(f"kernel expects {self.dim}-dimensional inputs")
        diff = np.abs(X[:, None, :] - X2[None, :, :])
        expo = np.einsum("nmd,d->nm", diff**self.powers, self.rates)
        return self.variance * np.exp(-expo)

    def diag(self, X) -> np.ndarray:
        return np.full(_as_2d(X).shape[0], self.variance)


@dataclass(frozen=True)
class ArdSqExpKernel(ArdPExpKernel):
    """ARD squared-exponential (Gaussian) kernel: all exponents fixed at 2."""

    powers: np.ndarray = field(default=None)

    def __init__(self, variance: float, rates):
        rates = np.atleast_1d(np.asarray(rates, dtype=float))
        object.__setattr__(self, "variance", float(variance))
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "powers", np.full(rates.shape, 2.0))
        self.__post_init__()

    def gram(self, X, X2=None) -> np.ndarray:
        X = _as_2d(X)
        X2 = X if X2 is None else _as_2d(X2)
        if X.shape[1] != self.dim or X2.shape[1] != self.dim:
            raise ValueError(f"kernel expects {self.dim}-dimensional inputs")
        diff = X[:, None, :] - X2[None, :, :]
        return self.variance * np.exp(-np.einsum("nmd,d->nm", diff * diff, self.rates))


@dataclass(frozen=True)
class KnotMapping:
    """Monotone per-dimension warping from piecewise-linear knot densities.

    ``densities[i]`` holds the nonnegative density values at ``k_i``
    equispaced knots on ``[0, 1]``; ``g_i`` is the normalized integral of the
    linear interpolant, so ``g_i(0) = 0`` and ``g_i(1) = 1``.
    """

    densities: tuple

    def __init__(self, densities: Sequence[Sequence[float]]):
        dens = []
        for rho in densities:
            rho = np.atleast_1d(np.asarray(rho, dtype=float)).copy()
            if np.any(rho < 0) or not np.all(np.isfinite(rho)):
                raise ValueError("knot densities must be finite and nonnegative")
            dens.append(rho)
        object.__setattr__(self, "densities", tuple(dens))

    @classmethod
    def uniform(cls, dim: int, knots: int) -> "KnotMapping":
        return cls([np.ones(knots) for _ in range(dim)])

    @property
    def dim(self) -> int:
        return len(self.densities)

    def is_identity(self, i: int) -> bool:
        rho = self.densities[i]
        return rho.size < 2 or bool(np.all(rho == rho[0]))

    def _map_1d(self, x: np.ndarray, rho: np.ndarray) -> np.ndarray:
        k = rho.size
        h = 1.0 / (k - 1)
        seg_area = 0.5 * h * (rho[:-1] + rho[1:])
        cum = np.concatenate([[0.0], np.cumsum(seg_area)])
        j = np.clip(np.floor(x / h).astype(int), 0, k - 2)
        u = x - j * h
        slope = (rho[j + 1] - rho[j]) / h
        partial = cum[j] + rho[j] * u + 0.5 * slope * u * u
        return partial / cum[-1]

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        squeeze = X.ndim == 1
        X = _as_2d(X)
        if X.shape[1] != self.dim:
            raise ValueError(f"mapping expects {self.dim}-dimensional inputs")
        out = X.copy()
        for i, rho in enumerate(self.densities):
            # all-equal (and all-zero) densities give the exact identity
            if self.is_identity(i):
                continue
            out[:, i] = self._map_1d(X[:, i], rho)
        return out[0] if squeeze else out


@dataclass(frozen=True)
class MappedKernel:
    """A p-exponential kernel evaluated on warped coordinates."""

    kernel: ArdPExpKernel
    mapping: KnotMapping

    @property
    def variance(self) -> float:
        return self.kernel.variance

    @property
    def dim(self) -> int:
        return self.kernel.dim

    def gram(self, X, X2=None) -> np.ndarray:
        GX = self.mapping(_as_2d(X))
        GX2 = None if X2 is None else self.mapping(_as_2d(X2))
        return self.kernel.gram(GX, GX2)

    def diag(self, X) -> np.ndarray:
        return self.kernel.diag(X)


Kernel = Union[ArdPExpKernel, MappedKernel]


def kernel_eval(kernel: Kernel, x, x2) -> float:
    return float(kernel.gram(_as_2d(x), _as_2d(x2))[0, 0])


def gram(kernel: Kernel, X, X2=None) -> np.ndarray:
    return kernel.gram(X, X2)


def map_point(mapping: KnotMapping, x) -> np.ndarray:
    return mapping(x)


def mapped_kernel_eval(kernel: ArdPExpKernel, mapping: KnotMapping, x, x2) -> float:
    return kernel_eval(MappedKernel(kernel, mapping), x, x2)
