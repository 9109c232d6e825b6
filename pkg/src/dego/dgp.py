"""Deep Gaussian processes with collapsed inducing-point variational bounds.

A model with ``L`` hidden layers composes ``L + 1`` GPs::

    h_1 = f_0(X) + e_0,  h_{l+1} = f_l(h_l) + e_l,  y = f_L(h_L) + e_L

Every GP uses an ARD squared-exponential kernel and its own inducing inputs.
Hidden layers carry a factorized Gaussian ``q(h_l)`` held as direct
per-datum means and variances. Each layer contributes the collapsed
(optimal ``q(u)``) sparse bound of its output given its input distribution,
computed from psi-statistics; hidden layers add the entropy of ``q(h_l)``.

The numerics run in float64 torch so that the bound can be differentiated;
the public functions take and return numpy arrays.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from scipy.optimize import minimize

from .gp import Dataset
from .kernels import ArdSqExpKernel
from .numerics import JITTER_SCHEDULE, NotPositiveDefinite
from .optimizers import SearchSpace, cmaes

logger = logging.getLogger(__name__)

DTYPE = torch.float64
LOG_2PI = math.log(2.0 * math.pi)
KMM_JITTER = 1e-10


class TrainingFailed(RuntimeError):
    """No finite evidence lower bound was found."""


def _t(a) -> torch.Tensor:
    return torch.as_tensor(np.asarray(a, dtype=float), dtype=DTYPE)


# ---------------------------------------------------------------------------
# torch primitives


def _chol(K: torch.Tensor, base: float = 0.0) -> torch.Tensor:
    """Cholesky with the jitter schedule of ``numerics``, starting at ``base``.

    ``base`` is relative to the mean diagonal.
    """
    mean_diag = torch.diagonal(K).mean()
    if not torch.isfinite(mean_diag) or mean_diag <= 0:
        raise NotPositiveDefinite("non-positive mean diagonal")
    eye = torch.eye(K.shape[0], dtype=K.dtype)
    for step in (base,) + tuple(j for j in JITTER_SCHEDULE if j > base):
        L, info = torch.linalg.cholesky_ex(K + step * mean_diag * eye if step else K)
        if int(info) == 0:
            return L
    raise NotPositiveDefinite("matrix is not positive definite")


def _chol_kmm(variance, rates, Z) -> torch.Tensor:
    # a pivot-free factorization of a near-singular Kmm "succeeds" with tiny
    # pivots and then wrecks every solve; such factors get a floor jitter
    K = _sqexp(variance, rates, Z, Z)
    L, info = torch.linalg.cholesky_ex(K)
    if int(info) == 0:
        floor = KMM_JITTER * torch.diagonal(K).mean()
        if bool(torch.all(torch.diagonal(L) ** 2 >= floor)):
            return L
    return _chol(K, KMM_JITTER)


def _sqexp(variance, rates, A, B):
    diff = A[:, None, :] - B[None, :, :]
    return variance * torch.exp(-(diff * diff * rates).sum(-1))


def _psi1(variance, rates, Z, mu, S):
    denom = 1.0 + 2.0 * rates * S
    diff = mu[:, None, :] - Z[None, :, :]
    expo = ((rates / denom)[:, None, :] * diff * diff).sum(-1)
    return variance * torch.exp(-0.5 * torch.log(denom).sum(-1)[:, None] - expo)


def _psi2_per_point(variance, rates, Z, mu, S):
    """``E_q[k(h_n, z_m) k(h_n, z_k)]`` for every ``n``, shape ``(N, M, M)``.

    The squared distance to the inducing midpoints is expanded so that the
    ``N x M x M`` term is one matrix product rather than a 4-d broadcast.
    Inputs are centred first to limit cancellation.
    """
    M, Q = Z.shape
    shift = Z.mean(0).detach()
    Zc, muc = Z - shift, mu - shift
    c = 2.0 * rates / (1.0 + 4.0 * rates * S)
    a = (c * muc * muc).sum(-1)
    G = -(c * muc) @ Zc.T + 0.25 * (c @ (Zc * Zc).T) + 0.5 * a[:, None]
    cross = (c @ (Zc[:, None, :] * Zc[None, :, :]).reshape(M * M, Q).T).reshape(-1, M, M)
    dz = Zc[:, None, :] - Zc[None, :, :]
    Dz = (dz * dz * rates).sum(-1)
    logpre = -0.5 * torch.log(1.0 + 4.0 * rates * S).sum(-1)
    expo = logpre[:, None, None] - 0.5 * Dz[None] - G[:, :, None] - G[:, None, :] - 0.5 * cross
    return variance**2 * torch.exp(torch.clamp(expo, max=0.0))


def _stats(variance, rates, Z, mu, S):
    """(psi0, Psi1, summed Psi2) for deterministic (``S=None``) or Gaussian inputs.

    For deterministic inputs Psi2 is returned as ``None``; it equals
    ``Psi1^T Psi1`` and is formed through a stabler route by the caller.
    """
    N = mu.shape[0]
    psi0 = N * variance
    if S is None:
        return psi0, _sqexp(variance, rates, mu, Z), None
    psi1 = _psi1(variance, rates, Z, mu, S)
    psi2 = _psi2_per_point(variance, rates, Z, mu, S).sum(0)
    return psi0, psi1, 0.5 * (psi2 + psi2.T)


def _tilted_means(rates, Z, mu, S):
    """Mean of ``h`` under ``N(h | mu, S) k(h, z_m)`` normalized, ``(N, M, Q)``."""
    denom = 1.0 + 2.0 * rates * S
    return (mu[:, None, :] + (2.0 * rates * S)[:, None, :] * Z[None, :, :]) / denom[:, None, :]


def _mean_index(q_in: int, q_out: int) -> torch.Tensor:
    """Input column feeding each output column of an identity mean function."""
    return torch.arange(q_out) % q_in


def _data_terms(psi1, rates, Z, mu, S, Y, Yvar, src):
    """``E||Y - m(h)||^2`` and ``sum_n E[k(h_n, Z) (y_n - m(h_n))^T]``.

    ``src`` selects the identity mean ``m(h) = h[:, src]``; ``None`` is a
    zero mean.
    """
    if src is None:
        quad = (Y * Y).sum()
        phi = psi1.T @ Y
    else:
        R = Y - mu[:, src]
        quad = (R * R).sum()
        if S is None:
            phi = psi1.T @ R
        else:
            quad = quad + S[:, src].sum()
            shifted = _tilted_means(rates, Z, mu, S)[:, :, src]
            phi = psi1.T @ Y - torch.einsum("nm,nmd->md", psi1, shifted)
    if Yvar is not None:
        quad = quad + Yvar.sum()
    return quad, phi


def _layer_core(variance, rates, noise, Z, mu, S, Y, Yvar, src):
    psi0, psi1, psi2 = _stats(variance, rates, Z, mu, S)
    M = Z.shape[0]
    Lm = _chol_kmm(variance, rates, Z)
    beta = 1.0 / noise
    if psi2 is None:
        V = torch.linalg.solve_triangular(Lm, psi1.T, upper=False)
        psi2t = V @ V.T
    else:
        tmp = torch.linalg.solve_triangular(Lm, psi2, upper=False)
        psi2t = torch.linalg.solve_triangular(Lm, tmp.T, upper=False)
        psi2t = 0.5 * (psi2t + psi2t.T)
    LB = _chol(torch.eye(M, dtype=DTYPE) + beta * psi2t)
    quad, phi = _data_terms(psi1, rates, Z, mu, S, Y, Yvar, src)
    c = torch.linalg.solve_triangular(LB, torch.linalg.solve_triangular(Lm, phi, upper=False), upper=False)
    return psi0, psi2t, Lm, LB, c, quad, beta


def _layer_bound(variance, rates, noise, Z, mu, S, Y, Yvar, src=None):
    """Collapsed sparse bound on ``E_q[log p(Y | inputs)]`` for one layer.

    ``S=None`` marks deterministic inputs, ``Yvar=None`` observed outputs,
    ``src`` an identity mean function (see ``_data_terms``).
    """
    N, D = Y.shape
    psi0, psi2t, Lm, LB, c, quad, beta = _layer_core(variance, rates, noise, Z, mu, S, Y, Yvar, src)
    return (
        -0.5 * N * D * (LOG_2PI + torch.log(noise))
        - D * torch.log(torch.diagonal(LB)).sum()
        - 0.5 * beta * quad
        + 0.5 * beta**2 * (c * c).sum()
        - 0.5 * D * beta * psi0
        + 0.5 * D * beta * torch.trace(psi2t)
    )


# ---------------------------------------------------------------------------
# model containers


@dataclass
class DgpLayer:
    """One GP of the stack and the variational posterior of its output.

    ``q_mean``/``q_var`` are ``None`` for the last layer, whose output is
    the observed (standardized) response.
    """

    variance: float
    rates: np.ndarray
    noise: float
    Z: np.ndarray
    q_mean: Optional[np.ndarray] = None
    q_var: Optional[np.ndarray] = None

    @property
    def input_dim(self) -> int:
        return self.Z.shape[1]

    @property
    def output_dim(self) -> int:
        return 1 if self.q_mean is None else self.q_mean.shape[1]

    @property
    def num_inducing(self) -> int:
        return self.Z.shape[0]

    @property
    def kernel(self) -> ArdSqExpKernel:
        return ArdSqExpKernel(self.variance, self.rates)


@dataclass(frozen=True)
class DgpConfig:
    """Architecture: ``hidden_layers`` latent layers of ``width`` each.

    ``width=None`` means input dimension + 1. ``inducing`` is ``"dynamic"``
    (one inducing input per datum) or a fixed count.
    """

    hidden_layers: int = 1
    width: Optional[int] = None
    widths: Optional[Tuple[int, ...]] = None
    inducing: Union[str, int] = "dynamic"
    init_rate: float = 5.0
    init_hidden_noise: float = 1e-2
    init_output_noise: float = 1e-2
    init_q_var: float = 1e-3
    mean_function: str = "identity"

    def __post_init__(self):
        if self.mean_function not in ("identity", "zero"):
            raise ValueError(f"unknown mean function {self.mean_function!r}")

    def layer_widths(self, input_dim: int) -> List[int]:
        if self.widths is not None:
            return list(self.widths)
        return [self.width or input_dim + 1] * self.hidden_layers


@dataclass(frozen=True)
class DgpTrainConfig:
    method: str = "lbfgs"
    maxiter: int = 1500
    warm_maxiter: int = 500
    noise_fix_iters: int = 300
    budget: int = 20000
    restarts: int = 2
    variance_bounds: tuple = (1e-6, 1e2)
    rate_bounds: tuple = (1e-3, 1e3)
    noise_bounds: tuple = (1e-8, 1.0)
    output_noise_bounds: Optional[tuple] = None
    q_var_bounds: tuple = (1e-8, 10.0)


@dataclass
class DgpModel:
    layers: List[DgpLayer]
    X: np.ndarray
    y: np.ndarray
    y_mean: float
    y_std: float
    config: DgpConfig = field(default_factory=DgpConfig)
    elbo: float = math.nan
    _posterior: Optional[list] = field(default=None, repr=False, compare=False)

    @property
    def hidden_layers(self) -> int:
        return len(self.layers) - 1

    @property
    def ys(self) -> np.ndarray:
        return (self.y - self.y_mean) / self.y_std

    def copy(self) -> "DgpModel":
        out = copy.deepcopy(self)
        out._posterior = None
        return out


# ---------------------------------------------------------------------------
# public numpy-facing operations


@dataclass(frozen=True)
class PsiStats:
    psi0: float
    psi1: np.ndarray
    psi2: np.ndarray


def psi_statistics(kernel: ArdSqExpKernel, Z, q_mean, q_var) -> PsiStats:
    """Expectations of kernel terms under ``h_n ~ N(q_mean_n, diag(q_var_n))``.

    ``psi0 = sum_n E[k(h_n, h_n)]``, ``Psi1[n, m] = E[k(h_n, z_m)]`` and
    ``Psi2[m, k] = sum_n E[k(h_n, z_m) k(h_n, z_k)]``.
    """
    with torch.no_grad():
        v, r = _t(kernel.variance), _t(kernel.rates)
        Z, mu, S = _t(np.atleast_2d(Z)), _t(np.atleast_2d(q_mean)), _t(np.atleast_2d(q_var))
        psi1 = _psi1(v, r, Z, mu, S)
        psi2 = _psi2_per_point(v, r, Z, mu, S).sum(0)
    return PsiStats(float(mu.shape[0] * kernel.variance), psi1.numpy(), (0.5 * (psi2 + psi2.T)).numpy())


def sparse_layer_bound(kernel: ArdSqExpKernel, Z, q_in, targets, noise: float) -> float:
    """Collapsed variational bound of one layer.

    Parameters
    ----------
    q_in : array or (mean, var)
        Deterministic inputs ``(N, Q)`` or a factorized Gaussian.
    targets : array or (mean, var)
        Observed outputs ``(N,)``/``(N, D)`` or a factorized Gaussian.

    Returns ``-inf`` when the inducing covariance cannot be factorized.
    """
    if isinstance(q_in, tuple):
        mu, S = _t(np.atleast_2d(q_in[0])), _t(np.atleast_2d(q_in[1]))
    else:
        mu, S = _t(np.atleast_2d(q_in)), None
    if isinstance(targets, tuple):
        Y, Yvar = _t(targets[0]), _t(targets[1])
    else:
        Y, Yvar = _t(targets), None
    if Y.ndim == 1:
        Y = Y[:, None]
        Yvar = None if Yvar is None else Yvar.reshape(-1, 1)
    try:
        with torch.no_grad():
            val = _layer_bound(
                _t(kernel.variance), _t(kernel.rates), _t(noise), _t(np.atleast_2d(Z)), mu, S, Y, Yvar
            )
    except NotPositiveDefinite:
        return -math.inf
    return float(val)


def _elbo_terms(params: list, X: torch.Tensor, Y: torch.Tensor, mean_function: str = "identity") -> torch.Tensor:
    """Sum of layer bounds plus hidden-layer entropies from torch parameters."""
    total = torch.zeros((), dtype=DTYPE)
    mu, S = X, None
    for i, p in enumerate(params):
        last = i == len(params) - 1
        if last:
            out_m, out_v, src = Y, None, None
        else:
            out_m, out_v = p["q_mean"], p["q_var"]
            src = None if mean_function == "zero" else _mean_index(mu.shape[1], out_m.shape[1])
        total = total + _layer_bound(p["variance"], p["rates"], p["noise"], p["Z"], mu, S, out_m, out_v, src)
        if not last:
            total = total + 0.5 * (torch.log(2.0 * math.pi * math.e * out_v)).sum()
            mu, S = out_m, out_v
    return total


def _torch_params(model: DgpModel) -> list:
    params = []
    for layer in model.layers:
        p = {
            "variance": _t(layer.variance),
            "rates": _t(layer.rates),
            "noise": _t(layer.noise),
            "Z": _t(layer.Z),
        }
        if layer.q_mean is not None:
            p["q_mean"], p["q_var"] = _t(layer.q_mean), _t(layer.q_var)
        params.append(p)
    return params


def elbo(model: DgpModel) -> float:
    """Evidence lower bound of the standardized responses (``-inf`` if not SPD)."""
    try:
        with torch.no_grad():
            return float(_elbo_terms(_torch_params(model), _t(model.X), _t(model.ys)[:, None], model.config.mean_function))
    except NotPositiveDefinite:
        return -math.inf


# ---------------------------------------------------------------------------
# initialization and training


def _tile(X: np.ndarray, width: int) -> np.ndarray:
    return X[:, np.arange(width) % X.shape[1]]


def _pick_inducing(points: np.ndarray, M: int, rng: np.random.Generator) -> np.ndarray:
    N = points.shape[0]
    if M <= N:
        return points[rng.choice(N, M, replace=False)].copy()
    idx = np.concatenate([rng.permutation(N), rng.choice(N, M - N, replace=True)])
    Z = points[idx].copy()
    # repeated picks would make the inducing covariance singular
    scale = 0.05 * np.maximum(np.ptp(points, axis=0), 1e-3)
    Z[N:] += scale * rng.standard_normal(Z[N:].shape)
    return Z


def init_dgp(config: DgpConfig, data: Dataset, rng: np.random.Generator, num_inducing: Optional[int] = None) -> DgpModel:
    """Initialize a DGP on ``data``.

    Hidden means tile the input columns across the layer width plus 1e-3
    jitter; hidden variances start at ``config.init_q_var``; inducing inputs
    are a random subset of each layer's initial input means.
    """
    X, y = data.X, data.y
    N, d = X.shape
    widths = config.layer_widths(d)
    if any(w < 1 for w in widths):
        raise ValueError("layer widths must be >= 1")
    M = num_inducing if num_inducing is not None else inducing_count(config.inducing, N)
    y_mean, y_std = float(np.mean(y)), float(np.std(y))
    if y_std == 0.0:
        y_std = 1.0

    layers = []
    inputs = X
    dims = [d] + widths
    for i, q_out in enumerate(widths + [None]):
        q_in = dims[i]
        rates = np.full(q_in, config.init_rate * d / q_in)
        Z = _pick_inducing(inputs, M, rng)
        if q_out is None:
            layers.append(DgpLayer(1.0, rates, config.init_output_noise, Z))
        else:
            mean = _tile(X, q_out) + 1e-3 * rng.standard_normal((N, q_out))
            var = np.full((N, q_out), config.init_q_var)
            layers.append(DgpLayer(1.0, rates, config.init_hidden_noise, Z, mean, var))
            inputs = mean
    return DgpModel(layers, X.copy(), y.copy(), y_mean, y_std, config)


def inducing_count(mode: Union[str, int], dataset_size: int) -> int:
    if mode == "dynamic":
        return dataset_size
    m = int(mode)
    if m < 1:
        raise ValueError("fixed inducing count must be >= 1")
    return m


class _Packer:
    """Flat, transformed parameter vector for a model's shape."""

    def __init__(self, model: DgpModel, cfg: DgpTrainConfig):
        self.shapes = []
        self.names: List[str] = []
        lo, hi = [], []
        for i, layer in enumerate(model.layers):
            last = i == len(model.layers) - 1
            noise_bounds = cfg.output_noise_bounds if last and cfg.output_noise_bounds else cfg.noise_bounds
            spec = [
                ("variance", (), "log", cfg.variance_bounds),
                ("rates", layer.rates.shape, "log", cfg.rate_bounds),
                ("noise", (), "log", noise_bounds),
                ("Z", layer.Z.shape, "free", None),
            ]
            if layer.q_mean is not None:
                spec += [
                    ("q_mean", layer.q_mean.shape, "free", None),
                    ("q_var", layer.q_var.shape, "log", cfg.q_var_bounds),
                ]
            for name, shape, tr, b in spec:
                size = int(np.prod(shape)) if shape else 1
                self.shapes.append((i, name, shape, size, tr))
                self.names += [name] * size
                if tr == "log":
                    lo += [math.log(b[0])] * size
                    hi += [math.log(b[1])] * size
                else:
                    lo += [-math.inf] * size
                    hi += [math.inf] * size
        self.lower, self.upper = np.array(lo), np.array(hi)
        self.n_layers = len(model.layers)
        self.mean_function = model.config.mean_function

    @property
    def size(self) -> int:
        return self.lower.size

    def mask(self, name: str) -> np.ndarray:
        return np.array([n == name for n in self.names])

    def pack(self, model: DgpModel) -> np.ndarray:
        parts = []
        for i, name, shape, size, tr in self.shapes:
            val = np.asarray(getattr(model.layers[i], name), dtype=float).reshape(-1)
            parts.append(np.log(val) if tr == "log" else val)
        return np.clip(np.concatenate(parts), self.lower, self.upper)

    def to_torch(self, v: torch.Tensor) -> list:
        params = [dict() for _ in range(self.n_layers)]
        k = 0
        for i, name, shape, size, tr in self.shapes:
            seg = v[k : k + size].reshape(shape)
            params[i][name] = torch.exp(seg) if tr == "log" else seg
            k += size
        return params

    def unpack(self, v: np.ndarray, template: DgpModel) -> DgpModel:
        out = template.copy()
        k = 0
        for i, name, shape, size, tr in self.shapes:
            seg = np.asarray(v[k : k + size], dtype=float)
            seg = np.exp(seg) if tr == "log" else seg
            val = float(seg[0]) if shape == () else seg.reshape(shape).copy()
            setattr(out.layers[i], name, val)
            k += size
        return out


def _warm_model(previous: DgpModel, data: Dataset, config: DgpConfig, rng: np.random.Generator) -> DgpModel:
    """Seed a model for ``data`` from one trained on a subset of it.

    Points already in ``previous`` keep their variational entries; new points
    copy those of their nearest previous neighbour. In dynamic mode every new
    point also contributes an inducing input at its layer-input mean.
    """
    X_old = previous.X
    N = data.n
    M = inducing_count(config.inducing, N)
    d2 = ((data.X[:, None, :] - X_old[None, :, :]) ** 2).sum(-1)
    nearest = np.argmin(d2, axis=1)
    exact = d2[np.arange(N), nearest] == 0.0

    layers = []
    inputs = data.X
    for layer in previous.layers:
        new = copy.deepcopy(layer)
        Z = layer.Z
        if Z.shape[0] < M:
            extra = inputs[~exact][: M - Z.shape[0]]
            if extra.shape[0] < M - Z.shape[0]:
                extra = np.vstack([extra, _pick_inducing(inputs, M - Z.shape[0] - extra.shape[0], rng)])
            Z = np.vstack([Z, extra])
        elif Z.shape[0] > M:
            Z = Z[:M]
        new.Z = Z.copy()
        if layer.q_mean is not None:
            new.q_mean = layer.q_mean[nearest].copy()
            new.q_var = layer.q_var[nearest].copy()
            inputs = new.q_mean
        layers.append(new)
    y_mean, y_std = float(np.mean(data.y)), float(np.std(data.y)) or 1.0
    return DgpModel(layers, data.X.copy(), data.y.copy(), y_mean, y_std, config)


def _optimize_lbfgs(packer: _Packer, v0: np.ndarray, X, Y, maxiter: int, fixed=None):
    best = {"f": math.inf, "v": v0.copy()}

    def fun(v):
        vt = torch.tensor(v, dtype=DTYPE, requires_grad=True)
        try:
            val = -_elbo_terms(packer.to_torch(vt), X, Y, packer.mean_function)
        except NotPositiveDefinite:
            return 1e30, np.zeros_like(v)
        if not torch.isfinite(val):
            return 1e30, np.zeros_like(v)
        val.backward()
        f = float(val.detach())
        g = vt.grad.numpy().copy()
        if not np.all(np.isfinite(g)):
            return 1e30, np.zeros_like(v)
        if f < best["f"]:
            best["f"], best["v"] = f, v.copy()
        return f, g

    lo = np.where(np.isfinite(packer.lower), packer.lower, None)
    hi = np.where(np.isfinite(packer.upper), packer.upper, None)
    if fixed is not None:
        lo, hi = lo.copy(), hi.copy()
        lo[fixed], hi[fixed] = v0[fixed], v0[fixed]
    bounds = list(zip(lo, hi))
    minimize(fun, v0, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": maxiter, "maxfun": int(1.25 * maxiter) + 20})
    return best["v"], best["f"]


def _optimize_cmaes(packer: _Packer, v0: np.ndarray, X, Y, cfg: DgpTrainConfig, rng):
    lo, hi = packer.lower.copy(), packer.upper.copy()
    free = ~np.isfinite(lo)
    span = np.maximum(np.abs(v0[free]), 1.0)
    lo[free], hi[free] = v0[free] - 2.0 * span, v0[free] + 2.0 * span
    space = SearchSpace(lo, hi)

    def objective(v):
        try:
            with torch.no_grad():
                return -float(_elbo_terms(packer.to_torch(torch.as_tensor(v, dtype=DTYPE)), X, Y, packer.mean_function))
        except NotPositiveDefinite:
            return math.inf

    return cmaes(objective, space, budget=cfg.budget, restarts=cfg.restarts, rng=rng, x0=v0, sigma0=0.1)


def train_dgp(
    model: DgpModel,
    config: DgpTrainConfig = DgpTrainConfig(),
    rng: Optional[np.random.Generator] = None,
    warm_start: Optional[DgpModel] = None,
) -> DgpModel:
    """Maximize the evidence lower bound over all parameters.

    Optimizes kernel variances and rates, layer noises, inducing inputs and
    variational means/variances jointly (log transform for positive
    quantities). With ``warm_start`` the search is seeded by that model,
    extended to ``model``'s data. The returned model is the best evaluated
    one, so its bound is never below the seed's.

    Raises
    ------
    TrainingFailed
        If no finite bound is found.
    """
    rng = np.random.default_rng() if rng is None else rng
    data = Dataset(model.X, model.y)
    seed = _warm_model(warm_start, data, model.config, rng) if warm_start is not None else model.copy()
    maxiter = config.warm_maxiter if warm_start is not None else config.maxiter

    trained = _fit(seed, config, rng, maxiter, warm_start is not None)
    if trained is None:
        raise TrainingFailed("no finite evidence lower bound found")

    # a hidden dimension whose means all collapse onto one value is reset once
    collapsed = [
        (i, j)
        for i, layer in enumerate(trained.layers)
        if layer.q_mean is not None
        for j in range(layer.q_mean.shape[1])
        if np.ptp(layer.q_mean[:, j]) < 1e-6
    ]
    if collapsed:
        logger.info("reinitializing %d collapsed hidden dimensions", len(collapsed))
        fresh = trained.copy()
        for i, j in collapsed:
            layer = fresh.layers[i]
            layer.q_mean[:, j] = fresh.X[:, j % fresh.X.shape[1]] + 1e-3 * rng.standard_normal(fresh.X.shape[0])
            layer.q_var[:, j] = fresh.config.init_q_var
        retrained = _fit(fresh, config, rng, maxiter, warm_start is not None)
        if retrained is not None and retrained.elbo > trained.elbo:
            trained = retrained
    return trained


def _fit(seed: DgpModel, config: DgpTrainConfig, rng, maxiter, warm=False) -> Optional[DgpModel]:
    packer = _Packer(seed, config)
    v0 = packer.pack(seed)
    X, Y = _t(seed.X), _t(seed.ys)[:, None]
    seed_model = packer.unpack(v0, seed)
    f0 = -elbo(seed_model)
    if config.method == "lbfgs":
        start = v0
        if not warm and config.noise_fix_iters > 0:
            # early on the all-noise explanation is a strong attractor
            start, _ = _optimize_lbfgs(packer, v0, X, Y, config.noise_fix_iters, packer.mask("noise"))
        v, f = _optimize_lbfgs(packer, start, X, Y, maxiter)
    elif config.method == "cmaes":
        try:
            v, f = _optimize_cmaes(packer, v0, X, Y, config, rng)
        except RuntimeError:
            v, f = v0, math.inf
    else:
        raise ValueError(f"unknown training method {config.method!r}")
    if not math.isfinite(f) and not math.isfinite(f0):
        return None
    if math.isfinite(f0) and not f < f0:
        v, f = v0, f0
    out = packer.unpack(v, seed)
    out.elbo = elbo(out)
    return out


# ---------------------------------------------------------------------------
# prediction


def _layer_posterior(p: dict, mu, S, Y, src):
    """Cached quantities of one layer's optimal ``q(u)`` for prediction."""
    M = p["Z"].shape[0]
    _, _, Lm, LB, c, _, beta = _layer_core(p["variance"], p["rates"], p["noise"], p["Z"], mu, S, Y, None, src)
    # w = beta A^{-1} Phi with A = Kmm + beta Psi2 = Lm B Lm^T
    w = beta * torch.linalg.solve_triangular(Lm.T, torch.linalg.solve_triangular(LB.T, c, upper=True), upper=True)
    eye = torch.eye(M, dtype=DTYPE)
    Lm_inv = torch.linalg.solve_triangular(Lm, eye, upper=False)
    LB_inv = torch.linalg.solve_triangular(LB, eye, upper=False)
    # Kmm^{-1} - A^{-1} = Lm^{-T} (I - B^{-1}) Lm^{-1}
    Kdiff = Lm_inv.T @ (eye - LB_inv.T @ LB_inv) @ Lm_inv
    return {"w": w, "Kdiff": 0.5 * (Kdiff + Kdiff.T), "src": src}


def _mean_fn_src(model: DgpModel, i: int):
    """Identity-mean column map of layer ``i`` or ``None`` for a zero mean."""
    layer = model.layers[i]
    if layer.q_mean is None or model.config.mean_function == "zero":
        return None
    return _mean_index(layer.input_dim, layer.output_dim)


def _posterior(model: DgpModel) -> list:
    if model._posterior is None:
        with torch.no_grad():
            params = _torch_params(model)
            post = []
            mu, S = _t(model.X), None
            for i, p in enumerate(params):
                last = i == len(params) - 1
                Y = _t(model.ys)[:, None] if last else p["q_mean"]
                post.append({**p, **_layer_posterior(p, mu, S, Y, _mean_fn_src(model, i))})
                if not last:
                    mu, S = p["q_mean"], p["q_var"]
        model._posterior = post
    return model._posterior


def _predict_layer(p: dict, mu, S):
    """Output moments of one layer at deterministic (``S=None``) or Gaussian inputs."""
    var_f, w, Kdiff, src = p["variance"], p["w"], p["Kdiff"], p["src"]
    if S is None:
        k = _sqexp(var_f, p["rates"], mu, p["Z"])
        mean = k @ w
        var = var_f - ((k @ Kdiff) * k).sum(-1, keepdim=True) + torch.zeros_like(mean)
        if src is not None:
            mean = mean + mu[:, src]
    else:
        psi1 = _psi1(var_f, p["rates"], p["Z"], mu, S)
        psi2 = _psi2_per_point(var_f, p["rates"], p["Z"], mu, S)
        fmean = psi1 @ w
        trace = (psi2 * Kdiff).sum((-2, -1))
        quad = torch.einsum("bmk,md,kd->bd", psi2, w, w)
        var = var_f - trace[:, None] + quad - fmean * fmean
        mean = fmean
        if src is not None:
            # h_out = f(h) + h[src]: add Var(h[src]) and 2 Cov(f, h[src])
            shifted = _tilted_means(p["rates"], p["Z"], mu, S)[:, :, src]
            cross = torch.einsum("bm,md,bmd->bd", psi1, w, shifted) - fmean * mu[:, src]
            var = var + S[:, src] + 2.0 * cross
            mean = mean + mu[:, src]
    return mean, torch.clamp(var, min=0.0) + p["noise"]


def predict_dgp_gaussian(model: DgpModel, x):
    """Moment-matched prediction: each layer's output is treated as Gaussian.

    Returns mean and variance of the response (scalars for one point,
    arrays for a batch ``(n, d)``).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    with torch.no_grad():
        post = _posterior(model)
        mu, S = _t(np.atleast_2d(x)), None
        for p in post:
            mu, S = _predict_layer(p, mu, S)
        mean = mu[:, 0].numpy() * model.y_std + model.y_mean
        var = S[:, 0].numpy() * model.y_std**2
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def predict_dgp_mc(model: DgpModel, x, k: int, rng: np.random.Generator):
    """Monte-Carlo prediction by ancestral sampling through the layers.

    Returns ``(mean, variance, samples)``; the variance is the unbiased
    sample variance. For a batch ``(n, d)`` the samples have shape ``(n, k)``.
    """
    if k < 2:
        raise ValueError("need k >= 2 samples")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    Xs = np.atleast_2d(x)
    B = Xs.shape[0]
    with torch.no_grad():
        post = _posterior(model)
        h = _t(np.repeat(Xs, k, axis=0))
        for p in post:
            mean, var = _predict_layer(p, h, None)
            eps = _t(rng.standard_normal(tuple(mean.shape)))
            h = mean + torch.sqrt(var) * eps
        samples = (h[:, 0].numpy() * model.y_std + model.y_mean).reshape(B, k)
    mean = samples.mean(axis=1)
    var = samples.var(axis=1, ddof=1)
    if single:
        return float(mean[0]), float(var[0]), samples[0]
    return mean, var, samples
