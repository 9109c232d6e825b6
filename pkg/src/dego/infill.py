"""Infill criteria: EI, PI, expected violation and probability of feasibility.

Analytic forms take a Gaussian prediction ``(mean, std)``; the ``*_mc``
forms take predictive samples along the last axis. All functions broadcast
over arrays of candidates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .numerics import norm_cdf, norm_pdf


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def _upper_tail_gain(gap, std):
    """E[max(0, gap + std * Z)] for Z ~ N(0, 1), exact at ``std = 0``."""
    gap = np.asarray(gap, dtype=float)
    std = np.asarray(std, dtype=float)
    gap, std = np.broadcast_arrays(gap, std)
    pos = std > 0
    safe = np.where(pos, std, 1.0)
    with np.errstate(over="ignore"):
        # subnormal std: z saturates to +-inf, which the tails handle exactly
        z = gap / safe
    val = gap * norm_cdf(z) + safe * norm_pdf(z)
    return np.where(pos, np.maximum(val, 0.0), np.maximum(gap, 0.0))


def expected_improvement(mean, std, y_min):
    """Expected improvement below ``y_min`` of a Gaussian prediction."""
    return _scalar_or_array(_upper_tail_gain(np.asarray(y_min) - np.asarray(mean), std))


def probability_of_improvement(mean, std, y_min):
    mean, std = np.broadcast_arrays(np.asarray(mean, float), np.asarray(std, float))
    pos = std > 0
    with np.errstate(over="ignore"):
        z = (y_min - mean) / np.where(pos, std, 1.0)
    out = np.where(pos, norm_cdf(z), (mean < y_min).astype(float))
    return _scalar_or_array(out)


def expected_violation(mean, std, level=0.0):
    """E[max(0, g - level)] for ``g ~ N(mean, std^2)``."""
    return _scalar_or_array(_upper_tail_gain(np.asarray(mean) - level, std))


def probability_of_feasibility(mean, std, tol=0.0):
    """P[g <= tol] for ``g ~ N(mean, std^2)``."""
    mean, std = np.broadcast_arrays(np.asarray(mean, float), np.asarray(std, float))
    pos = std > 0
    z = (tol - mean) / np.where(pos, std, 1.0)
    out = np.where(pos, norm_cdf(z), (mean <= tol).astype(float))
    return _scalar_or_array(out)


def ei_mc(samples, y_min):
    """Sample average of the improvement ``max(0, y_min - y)``."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape[-1] < 2:
        raise ValueError("ei_mc needs at least 2 samples")
    return _scalar_or_array(np.mean(np.maximum(y_min - samples, 0.0), axis=-1))


def pi_mc(samples, y_min):
    return _scalar_or_array(np.mean(np.asarray(samples) < y_min, axis=-1))


def ev_mc(samples, level=0.0):
    return _scalar_or_array(np.mean(np.maximum(np.asarray(samples) - level, 0.0), axis=-1))


def pof_mc(samples, tol=0.0):
    return _scalar_or_array(np.mean(np.asarray(samples) <= tol, axis=-1))


@dataclass(frozen=True)
class AcquisitionSpec:
    """Infill criterion and constraint-handling policy.

    ``constraint_policy`` is one of ``"none"``, ``"expected_violation"``
    (``threshold`` is the tolerated EV) or ``"probability_of_feasibility"``
    (``min_prob`` is informational; the criterion is EI times the PoF).
    ``prediction`` is ``"gaussian"`` or ``"mc"`` with ``mc_samples`` draws.
    """

    criterion: str = "EI"
    constraint_policy: str = "none"
    threshold: float = 1e-3
    min_prob: float = 0.5
    level: float = 0.0
    prediction: str = "gaussian"
    mc_samples: int = 100

    def __post_init__(self):
        if self.criterion not in ("EI", "PI"):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.constraint_policy not in ("none", "expected_violation", "probability_of_feasibility"):
            raise ValueError(f"unknown constraint policy {self.constraint_policy!r}")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.prediction not in ("gaussian", "mc"):
            raise ValueError(f"unknown prediction mode {self.prediction!r}")
        if self.prediction == "mc" and self.mc_samples < 2:
            raise ValueError("mc prediction needs at least 2 samples")


@dataclass
class Prediction:
    """Predictive summary for a batch of candidates.

    Gaussian mode fills ``mean``/``std``; MC mode fills ``samples`` with shape
    ``(n_candidates, k)``.
    """

    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None

    @property
    def is_mc(self) -> bool:
        return self.samples is not None


def _improvement(spec: AcquisitionSpec, pred: Prediction, y_min):
    if pred.is_mc:
        return ei_mc(pred.samples, y_min) if spec.criterion == "EI" else pi_mc(pred.samples, y_min)
    if spec.criterion == "EI":
        return expected_improvement(pred.mean, pred.std, y_min)
    return probability_of_improvement(pred.mean, pred.std, y_min)


def _violation(spec: AcquisitionSpec, pred: Prediction):
    if pred.is_mc:
        return ev_mc(pred.samples, spec.level)
    return expected_violation(pred.mean, pred.std, spec.level)


def _feasibility(spec: AcquisitionSpec, pred: Prediction):
    if pred.is_mc:
        return pof_mc(pred.samples, spec.level)
    return probability_of_feasibility(pred.mean, pred.std, spec.level)


def acquisition_value(
    spec: AcquisitionSpec,
    objective: Prediction,
    constraints: Sequence[Prediction] = (),
    y_min: Optional[float] = None,
):
    """Constrained infill value to be maximized.

    Under the expected-violation policy a candidate whose every constraint
    has EV within ``threshold`` scores its EI; otherwise it scores minus the
    summed EV excess, which is strictly negative. With no feasible
    observation yet (``y_min is None``) the value is minus the summed EV.
    """
    policy = spec.constraint_policy if constraints else "none"
    if y_min is None:
        if not constraints:
            raise ValueError("y_min is required for unconstrained acquisition")
        return _scalar_or_array(-np.sum([np.asarray(_violation(spec, c)) for c in constraints], axis=0))

    gain = np.asarray(_improvement(spec, objective, y_min), dtype=float)
    if policy == "none":
        return _scalar_or_array(gain)
    if policy == "expected_violation":
        ev = np.array([np.asarray(_violation(spec, c), dtype=float) for c in constraints])
        excess = np.sum(np.maximum(ev - spec.threshold, 0.0), axis=0)
        feasible = np.all(ev <= spec.threshold, axis=0)
        return _scalar_or_array(np.where(feasible, gain, -excess))
    pof = np.prod([np.asarray(_feasibility(spec, c), dtype=float) for c in constraints], axis=0)
    return _scalar_or_array(gain * pof)
