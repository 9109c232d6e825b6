"""The EGO loop with GP, warped-GP or DGP surrogates, and repeated studies."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .dgp import (
    DgpConfig,
    DgpTrainConfig,
    TrainingFailed,
    inducing_count,
    init_dgp,
    predict_dgp_gaussian,
    predict_dgp_mc,
    train_dgp,
)
from .doe import lhs
from .gp import Dataset, GpModel, GpTrainConfig, fit_gp, predict_gp
from .infill import AcquisitionSpec, Prediction, acquisition_value
from .numerics import make_rng
from .optimizers import AllEvaluationsInvalid, SearchSpace, differential_evolution
from .problems import Problem

logger = logging.getLogger(__name__)


class SurrogateTrainingFailed(RuntimeError):
    """A surrogate could not be trained; the run stops early."""


@dataclass(frozen=True)
class SurrogateSpec:
    """Surrogate backend: ``"gp"`` (p-exponential Kriging), ``"nlgp"``
    (Kriging on knot-warped inputs) or ``"dgp"``."""

    kind: str = "gp"
    knots: int = 4
    dgp: DgpConfig = DgpConfig()

    def __post_init__(self):
        if self.kind not in ("gp", "nlgp", "dgp"):
            raise ValueError(f"unknown surrogate kind {self.kind!r}")
        if self.kind == "nlgp" and self.knots < 2:
            raise ValueError("nlgp needs at least 2 knots")


@dataclass(frozen=True)
class EgoConfig:
    """Settings of one EGO run.

    ``objective_surrogate`` overrides ``surrogate`` for the objective only;
    constraints always use ``surrogate``. ``layer_schedule`` maps an
    iteration index to a hidden-layer count from that iteration on (DGP
    only); it is a fixed schedule, nothing adapts it automatically.
    """

    surrogate: SurrogateSpec = SurrogateSpec()
    objective_surrogate: Optional[SurrogateSpec] = None
    acquisition: AcquisitionSpec = AcquisitionSpec()
    doe_size: int = 5
    infill_count: int = 20
    warm_start: bool = True
    success_tol: float = 1e-3
    de_pop: int = 40
    de_generations: int = 150
    gp_train: GpTrainConfig = GpTrainConfig()
    dgp_train: DgpTrainConfig = DgpTrainConfig()
    layer_schedule: Optional[Dict[int, int]] = None

    def __post_init__(self):
        if self.doe_size < 2:
            raise ValueError("doe_size must be >= 2")
        if self.infill_count < 0:
            raise ValueError("infill_count must be >= 0")


@dataclass
class IterationEntry:
    index: int
    x: np.ndarray
    objective: float
    constraints: np.ndarray
    acquisition: float
    diagnostics: Dict[str, float]
    best: float
    jittered: bool = False


@dataclass
class RunRecord:
    """History of one run. ``best`` is ``inf`` while nothing is feasible."""

    seed: int
    X: np.ndarray
    f: np.ndarray
    g: np.ndarray
    doe_size: int
    entries: List[IterationEntry] = field(default_factory=list)
    failed: bool = False
    error: Optional[str] = None

    @property
    def feasible(self) -> np.ndarray:
        return np.all(self.g <= 0.0, axis=1)

    @property
    def best_trace(self) -> np.ndarray:
        """Best feasible value after the DoE and after every infill point."""
        vals = np.where(self.feasible, self.f, np.inf)
        return np.minimum.accumulate(vals)[self.doe_size - 1 :]

    @property
    def best(self) -> float:
        return float(self.best_trace[-1])

    @property
    def best_x(self) -> Optional[np.ndarray]:
        vals = np.where(self.feasible, self.f, np.inf)
        if not np.isfinite(vals).any():
            return None
        return self.X[int(np.argmin(vals))]


def inducing_schedule(mode, dataset_size: int) -> int:
    """Inducing inputs per layer: the dataset size, or a fixed count."""
    return inducing_count(mode, dataset_size)


class _Surrogate:
    """Refits one response (objective or a constraint) every iteration."""

    def __init__(self, spec: SurrogateSpec, config: EgoConfig):
        self.spec, self.config = spec, config
        self.model = None

    def fit(self, data: Dataset, rng: np.random.Generator, hidden_layers: Optional[int] = None) -> Dict[str, float]:
        spec, cfg = self.spec, self.config
        prev = self.model if cfg.warm_start else None
        try:
            if spec.kind in ("gp", "nlgp"):
                family = "pexp" if spec.kind == "gp" else "nlgp"
                self.model = fit_gp(data, family, spec.knots, cfg.gp_train, rng, warm_start=prev)
                return {"log_marginal": self.model.log_marginal}
            dcfg = spec.dgp
            if hidden_layers is not None and hidden_layers != dcfg.hidden_layers:
                dcfg = DgpConfig(**{**dcfg.__dict__, "hidden_layers": hidden_layers, "widths": None})
            if prev is not None and prev.hidden_layers != dcfg.hidden_layers:
                prev = None
            fresh = init_dgp(dcfg, data, rng, inducing_schedule(dcfg.inducing, data.n))
            self.model = train_dgp(fresh, cfg.dgp_train, rng, warm_start=prev)
            return {"elbo": self.model.elbo}
        except (TrainingFailed, AllEvaluationsInvalid) as exc:
            raise SurrogateTrainingFailed(str(exc)) from exc

    def predict(self, X: np.ndarray, seed: int) -> Prediction:
        acq = self.config.acquisition
        if isinstance(self.model, GpModel):
            mean, var = predict_gp(self.model, X)
        elif acq.prediction == "mc":
            # one seed per iteration: every candidate and every response
            # sees the same normal draws
            _, _, samples = predict_dgp_mc(self.model, X, acq.mc_samples, np.random.default_rng(seed))
            return Prediction(samples=samples)
        else:
            mean, var = predict_dgp_gaussian(self.model, X)
        return Prediction(mean=mean, std=np.sqrt(var))


def _hidden_layers_at(schedule: Optional[Dict[int, int]], iteration: int) -> Optional[int]:
    if not schedule:
        return None
    keys = [k for k in schedule if k <= iteration]
    return schedule[max(keys)] if keys else None


def run_ego(problem: Problem, config: EgoConfig, rng, X0: Optional[np.ndarray] = None, seed: int = -1) -> RunRecord:
    """Run ``config.infill_count`` EGO iterations on ``problem``.

    The initial design is ``X0`` or a Latin hypercube of ``config.doe_size``
    points drawn from ``rng``. A surrogate training failure stops the run
    and flags the returned record.
    """
    rng = make_rng(rng)
    if X0 is None:
        X0 = lhs(config.doe_size, problem.dim, rng)
    X = np.atleast_2d(np.asarray(X0, dtype=float))
    f, g = problem.evaluate(X)
    record = RunRecord(seed, X, f, g, len(X))

    obj_spec = config.objective_surrogate or config.surrogate
    obj_model = _Surrogate(obj_spec, config)
    con_models = [_Surrogate(config.surrogate, config) for _ in range(problem.n_constraints)]
    space = SearchSpace.unit(problem.dim)
    acq = config.acquisition
    if problem.n_constraints and acq.constraint_policy == "none":
        acq = AcquisitionSpec(**{**acq.__dict__, "constraint_policy": "expected_violation"})

    for it in range(config.infill_count):
        layers = _hidden_layers_at(config.layer_schedule, it)
        diag: Dict[str, float] = {}
        try:
            for name, model, y in [("objective", obj_model, record.f)] + [
                (f"constraint{j}", m, record.g[:, j]) for j, m in enumerate(con_models)
            ]:
                for key, val in model.fit(Dataset(record.X, y), rng, layers).items():
                    diag[f"{name}_{key}"] = val
        except SurrogateTrainingFailed as exc:
            logger.warning("run %d stopped at iteration %d: %s", seed, it, exc)
            record.failed, record.error = True, str(exc)
            break

        feas = record.feasible
        y_min = float(record.f[feas].min()) if feas.any() else None
        iter_seed = int(rng.integers(2**63 - 1))

        def acquisition(C):
            objective = obj_model.predict(C, iter_seed)
            constraints = [m.predict(C, iter_seed) for m in con_models]
            if y_min is None and not constraints:
                raise RuntimeError("unreachable: unconstrained problem without a best value")
            return acquisition_value(acq, objective, constraints, y_min)

        x, value = differential_evolution(
            acquisition, space, pop=config.de_pop, generations=config.de_generations, rng=rng, vectorized=True
        )
        jittered = False
        if np.min(np.linalg.norm(record.X - x, axis=1)) < 1e-9:
            x = np.clip(x + rng.uniform(-1e-6, 1e-6, size=x.shape), 0.0, 1.0)
            jittered = True
            logger.info("run %d iteration %d: proposal duplicates a design point, jittered", seed, it)
        fx, gx = problem.evaluate(x[None, :])
        record.X = np.vstack([record.X, x])
        record.f = np.concatenate([record.f, fx])
        record.g = np.vstack([record.g, gx])
        record.entries.append(IterationEntry(it, x, float(fx[0]), gx[0], float(value), diag, record.best, jittered))
    return record


@dataclass
class StudySummary:
    """Aggregate of repeated runs.

    ``variance`` is the population variance of the final best values over
    runs that found a feasible point.
    """

    mean_best: float
    variance: float
    success_pct: float
    repetitions: int
    seed: int
    records: List[RunRecord]
    optimum: float
    success_tol: float

    @property
    def mean_trace(self) -> np.ndarray:
        return mean_trace(self.records)


def mean_trace(records: Sequence[RunRecord]) -> np.ndarray:
    """Column mean of best-feasible traces (runs without a feasible point
    at a given count are left out of that column)."""
    length = max(len(r.best_trace) for r in records)
    traces = np.full((len(records), length), np.nan)
    for i, r in enumerate(records):
        t = r.best_trace
        traces[i, : len(t)] = np.where(np.isfinite(t), t, np.nan)
    with np.errstate(invalid="ignore"):
        counts = np.sum(~np.isnan(traces), axis=0)
        sums = np.nansum(traces, axis=0)
    return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def _single_run(args):
    problem, config, seed = args
    rng = make_rng(seed)
    # the design is the first draw, so every algorithm sees the same DoE
    X0 = lhs(config.doe_size, problem.dim, rng)
    return run_ego(problem, config, rng, X0=X0, seed=seed)


def repeat_study(problem: Problem, config: EgoConfig, n_repetitions: int, base_seed: int = 0, jobs: int = 1) -> StudySummary:
    """Run ``n_repetitions`` independent runs with seeds ``base_seed + r``.

    A run succeeds when its best point is feasible and within
    ``config.success_tol`` of the problem's grid-oracle optimum.
    """
    if n_repetitions < 1:
        raise ValueError("n_repetitions must be >= 1")
    tasks = [(problem, config, base_seed + r) for r in range(n_repetitions)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_single_run, tasks))
    else:
        records = [_single_run(t) for t in tasks]
    optimum = problem.optimum[0]
    bests = np.array([r.best for r in records])
    finite = bests[np.isfinite(bests)]
    with np.errstate(invalid="ignore"):
        success = np.isfinite(bests) & (np.abs(bests - optimum) <= config.success_tol)
    return StudySummary(
        mean_best=float(finite.mean()) if finite.size else math.nan,
        variance=float(finite.var()) if finite.size else math.nan,
        success_pct=100.0 * float(success.mean()),
        repetitions=n_repetitions,
        seed=base_seed,
        records=records,
        optimum=optimum,
        success_tol=config.success_tol,
    )
