"""Shared numerical kernels: stable Cholesky, Gaussian density/CDF, seeded RNG."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr

LOG_2PI = math.log(2.0 * math.pi)

# relative to the mean diagonal; first attempt is always jitter-free
JITTER_SCHEDULE = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Raised when a matrix cannot be factorized within the jitter cap."""


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky factor of ``A + jitter * I``."""

    L: np.ndarray
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.L.shape[0]

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))

    def solve_lower(self, b: np.ndarray) -> np.ndarray:
        """Return ``L^{-1} b``."""
        return solve_triangular(self.L, b, lower=True, check_finite=False)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Return ``(L L^T)^{-1} b``."""
        tmp = solve_triangular(self.L, b, lower=True, check_finite=False)
        return solve_triangular(self.L.T, tmp, lower=False, check_finite=False)

    def matrix(self) -> np.ndarray:
        return self.L @ self.L.T


def cholesky(matrix: np.ndarray) -> SpdFactor:
    """Cholesky factorization with escalating diagonal jitter.

    Tries the plain factorization first, then adds ``s * mean(diag)`` for
    ``s`` in 1e-10, 1e-9, ..., 1e-4.

    Raises
    ------
    NotPositiveDefinite
        If the factorization still fails at the largest jitter.
    """
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-12 * scale):
        raise ValueError("matrix is not symmetric")
    try:
        return SpdFactor(np.linalg.cholesky(A), 0.0)
    except np.linalg.LinAlgError:
        pass
    mean_diag = float(np.mean(np.diag(A)))
    if not np.isfinite(mean_diag) or mean_diag <= 0.0:
        raise NotPositiveDefinite("non-positive mean diagonal")
    eye = np.eye(A.shape[0])
    for step in JITTER_SCHEDULE:
        jitter = step * mean_diag
        try:
            return SpdFactor(np.linalg.cholesky(A + jitter * eye), jitter)
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefinite(
        f"factorization failed with jitter up to {JITTER_SCHEDULE[-1] * mean_diag:.3g}"
    )


def norm_pdf(z):
    """Standard normal density."""
    z = np.asarray(z, dtype=float)
    with np.errstate(over="ignore"):
        out = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return out if out.ndim else float(out)


def norm_cdf(z):
    """Standard normal CDF."""
    out = ndtr(np.asarray(z, dtype=float))
    return out if np.ndim(out) else float(out)


def mvn_logpdf(y: np.ndarray, mean: np.ndarray, cov_factor: SpdFactor) -> float:
    """Log-density of ``N(mean, L L^T)`` at ``y``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mean = np.broadcast_to(np.asarray(mean, dtype=float), y.shape)
    if y.ndim != 1 or cov_factor.n != y.shape[0]:
        raise ValueError(
            f"dimension mismatch: y has shape {y.shape}, factor is {cov_factor.n}x{cov_factor.n}"
        )
    alpha = cov_factor.solve_lower(y - mean)
    n = y.shape[0]
    return -0.5 * (n * LOG_2PI + cov_factor.logdet() + float(alpha @ alpha))


def make_rng(seed: int | np.random.Generator | None) -> np.random.Generator:
    """Return a PCG64 generator; passes existing generators through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
