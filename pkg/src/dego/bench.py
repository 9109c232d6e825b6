"""Benchmark configuration files, study orchestration and CSV outputs.

A configuration is flat ``key = value`` text with ``#`` comments. Global
keys may appear anywhere; each ``algorithm = ...`` line opens a block and
the algorithm keys that follow apply to it (algorithm keys placed before
the first block are defaults for every block)::

    problem = xiong_1d
    doe_size = 5
    infill = 20
    repetitions = 10
    seed = 0

    algorithm = ego
    algorithm = dego
    layers = 1
    width = 2
    inducing = 25
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .dgp import DgpConfig, DgpTrainConfig
from .ego import EgoConfig, RunRecord, StudySummary, SurrogateSpec, mean_trace, repeat_study
from .gp import GpTrainConfig
from .infill import AcquisitionSpec
from .problems import PROBLEMS, Problem, get_problem

logger = logging.getLogger(__name__)

GLOBAL_KEYS = {
    "problem", "doe_size", "infill", "repetitions", "seed", "success_tol",
    "constraint", "objective_surrogate", "criterion", "warm_start",
}
BLOCK_KEYS = {"layers", "width", "inducing", "knots", "prediction", "label", "output_noise_max"}
ALGORITHMS = ("ego", "nlego", "dego")


class ConfigError(ValueError):
    """Invalid benchmark configuration, with the offending line and key."""

    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None):
        self.line, self.key = line, key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass
class AlgorithmSpec:
    name: str
    line: int
    options: Dict[str, Tuple[str, int]] = field(default_factory=dict)

    def get(self, key: str, default=None):
        return self.options[key][0] if key in self.options else default

    def line_of(self, key: str) -> int:
        return self.options[key][1] if key in self.options else self.line


@dataclass
class BenchmarkConfig:
    problem: Problem
    algorithms: List[Tuple[str, EgoConfig]]
    repetitions: int
    seed: int
    source: Optional[str] = None


def _parse_int(value: str, line: int, key: str, minimum: Optional[int] = None) -> int:
    try:
        out = int(value)
    except ValueError:
        raise ConfigError(f"expected an integer, got {value!r}", line, key) from None
    if minimum is not None and out < minimum:
        raise ConfigError(f"must be >= {minimum}, got {out}", line, key)
    return out


def _parse_float(value: str, line: int, key: str, positive: bool = False) -> float:
    try:
        out = float(value)
    except ValueError:
        raise ConfigError(f"expected a number, got {value!r}", line, key) from None
    if not math.isfinite(out) or (positive and out <= 0):
        raise ConfigError(f"expected a finite{' positive' if positive else ''} number, got {value!r}", line, key)
    return out


def _parse_bool(value: str, line: int, key: str) -> bool:
    v = value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}", line, key)


def _tokenize(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("missing key", lineno)
        if not value:
            raise ConfigError("missing value", lineno, key)
        yield lineno, key.lower(), value


def _prediction(value: str, line: int) -> Tuple[str, int]:
    if value == "gaussian":
        return "gaussian", 100
    if value.startswith("mc"):
        parts = value.split(":")
        k = _parse_int(parts[1], line, "prediction", minimum=2) if len(parts) == 2 else 100
        return "mc", k
    raise ConfigError(f"expected 'gaussian' or 'mc:k', got {value!r}", line, "prediction")


def _constraint_policy(value: str, line: int) -> Dict[str, object]:
    kind, _, arg = value.partition(":")
    if kind == "ev":
        thr = _parse_float(arg, line, "constraint", positive=True) if arg else 1e-3
        return {"constraint_policy": "expected_violation", "threshold": thr}
    if kind == "pof":
        p = _parse_float(arg, line, "constraint", positive=True) if arg else 0.5
        return {"constraint_policy": "probability_of_feasibility", "min_prob": p}
    raise ConfigError(f"expected 'ev[:threshold]' or 'pof[:p]', got {value!r}", line, "constraint")


def default_label(algo: AlgorithmSpec, problem: Problem) -> str:
    if algo.name == "ego":
        return "EGO"
    if algo.name == "nlego":
        return f"NLEGO {algo.get('knots', '4')} knots"
    width = algo.get("width", str(problem.dim + 1))
    return f"DEGO {algo.get('layers', '1')}HL {width}D {algo.get('inducing', 'dynamic')}"


def parse_config(text: str, source: Optional[str] = None) -> BenchmarkConfig:
    """Parse configuration text; raises ConfigError with line diagnostics."""
    globals_: Dict[str, Tuple[str, int]] = {}
    defaults: Dict[str, Tuple[str, int]] = {}
    blocks: List[AlgorithmSpec] = []
    for lineno, key, value in _tokenize(text):
        if key == "algorithm":
            name = value.lower()
            if name not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {value!r}; choose from {', '.join(ALGORITHMS)}", lineno, key)
            blocks.append(AlgorithmSpec(name, lineno, dict(defaults)))
        elif key in GLOBAL_KEYS:
            if key in globals_:
                raise ConfigError(f"duplicate key (first set on line {globals_[key][1]})", lineno, key)
            globals_[key] = (value, lineno)
        elif key in BLOCK_KEYS:
            target = blocks[-1].options if blocks else defaults
            if blocks and key in target and target[key][1] > blocks[-1].line:
                raise ConfigError(f"duplicate key in this algorithm block (line {target[key][1]})", lineno, key)
            target[key] = (value, lineno)
        else:
            raise ConfigError("unknown key", lineno, key)

    if "problem" not in globals_:
        raise ConfigError("missing required key", None, "problem")
    pname, pline = globals_["problem"]
    if pname not in PROBLEMS:
        raise ConfigError(f"unknown problem {pname!r}; choose from {', '.join(sorted(PROBLEMS))}", pline, "problem")
    problem = get_problem(pname)
    if not blocks:
        raise ConfigError("no algorithm configured")

    def g(key, parse, default, **kw):
        if key not in globals_:
            return default
        value, line = globals_[key]
        return parse(value, line, key, **kw)

    doe_size = g("doe_size", _parse_int, 5, minimum=2)
    infill = g("infill", _parse_int, 20, minimum=0)
    repetitions = g("repetitions", _parse_int, 20, minimum=1)
    seed = g("seed", _parse_int, 0)
    success_tol = g("success_tol", _parse_float, 1e-3, positive=True)
    warm_start = g("warm_start", _parse_bool, True)
    acq_kw: Dict[str, object] = {}
    if "constraint" in globals_:
        acq_kw.update(_constraint_policy(*globals_["constraint"]))
    elif problem.n_constraints:
        acq_kw.update(constraint_policy="expected_violation", threshold=1e-3)
    if "criterion" in globals_:
        value, line = globals_["criterion"]
        if value.upper() not in ("EI", "PI"):
            raise ConfigError(f"expected EI or PI, got {value!r}", line, "criterion")
        acq_kw["criterion"] = value.upper()
    objective_surrogate = None
    if "objective_surrogate" in globals_:
        value, line = globals_["objective_surrogate"]
        if value not in ("gp", "same"):
            raise ConfigError(f"expected 'gp' or 'same', got {value!r}", line, "objective_surrogate")
        objective_surrogate = SurrogateSpec("gp") if value == "gp" else None

    algorithms = []
    labels = set()
    for algo in blocks:
        pred, k = _prediction(algo.get("prediction", "gaussian"), algo.line_of("prediction"))
        acquisition = AcquisitionSpec(prediction=pred, mc_samples=k, **acq_kw)
        dgp_train = DgpTrainConfig()
        if algo.name == "ego":
            spec = SurrogateSpec("gp")
        elif algo.name == "nlego":
            spec = SurrogateSpec("nlgp", knots=_parse_int(algo.get("knots", "4"), algo.line_of("knots"), "knots", minimum=2))
        else:
            layers = _parse_int(algo.get("layers", "1"), algo.line_of("layers"), "layers", minimum=0)
            width = _parse_int(algo.get("width", str(problem.dim + 1)), algo.line_of("width"), "width", minimum=1)
            inducing = algo.get("inducing", "dynamic")
            if inducing != "dynamic":
                inducing = _parse_int(inducing, algo.line_of("inducing"), "inducing", minimum=1)
            spec = SurrogateSpec("dgp", dgp=DgpConfig(hidden_layers=layers, width=width, inducing=inducing))
            if "output_noise_max" in algo.options:
                cap = _parse_float(algo.get("output_noise_max"), algo.line_of("output_noise_max"), "output_noise_max", positive=True)
                dgp_train = DgpTrainConfig(output_noise_bounds=(1e-8, cap))
        label = algo.get("label") or default_label(algo, problem)
        if label in labels:
            raise ConfigError(f"duplicate algorithm label {label!r}", algo.line, "label")
        labels.add(label)
        cfg = EgoConfig(
            surrogate=spec,
            objective_surrogate=objective_surrogate,
            acquisition=acquisition,
            doe_size=doe_size,
            infill_count=infill,
            warm_start=warm_start,
            success_tol=success_tol,
            dgp_train=dgp_train,
        )
        algorithms.append((label, cfg))
    return BenchmarkConfig(problem, algorithms, repetitions, seed, source)


def load_config(path: Union[str, Path]) -> BenchmarkConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text, str(path))


# ---------------------------------------------------------------------------
# outputs


def write_summary(path: Path, results: Sequence[Tuple[str, StudySummary]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algorithm", "mean_best", "variance", "success_pct", "repetitions", "seed"])
        for label, s in results:
            w.writerow([label, repr(s.mean_best), repr(s.variance), repr(s.success_pct), s.repetitions, s.seed])


def emit_convergence(path: Union[str, Path], results: Sequence[Tuple[str, Sequence[RunRecord]]]) -> Path:
    """Write per-algorithm mean best-feasible value at each evaluation count."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algorithm", "evaluations", "mean_best"])
        for label, records in results:
            trace = mean_trace(records)
            start = records[0].doe_size
            for i, v in enumerate(trace):
                w.writerow([label, start + i, repr(float(v))])
    return path


def write_runs(path: Path, results: Sequence[Tuple[str, StudySummary]]) -> None:
    """One row per repetition so every summary value can be replayed."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algorithm", "seed", "best", "best_x", "success", "failed", "error"])
        for label, s in results:
            for r in s.records:
                ok = math.isfinite(r.best) and abs(r.best - s.optimum) <= s.success_tol
                bx = "" if r.best_x is None else " ".join(repr(float(v)) for v in r.best_x)
                w.writerow([label, r.seed, repr(r.best), bx, int(ok), int(r.failed), r.error or ""])


def run_benchmark(
    config: Union[str, Path, BenchmarkConfig],
    out_dir: Union[str, Path] = "results",
    jobs: int = 1,
    seed: Optional[int] = None,
) -> List[Tuple[str, StudySummary]]:
    """Run every configured algorithm and write ``summary.csv``,
    ``trace.csv`` and ``runs.csv`` into ``out_dir``."""
    if not isinstance(config, BenchmarkConfig):
        config = load_config(config)
    base_seed = config.seed if seed is None else seed
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    opt_value, opt_x = config.problem.optimum
    logger.info("problem %s: grid optimum %.6g at %s", config.problem.name, opt_value, opt_x)
    results = []
    for label, cfg in config.algorithms:
        t0 = time.time()
        summary = repeat_study(config.problem, cfg, config.repetitions, base_seed, jobs=jobs)
        logger.info(
            "%s: mean best %.6g, variance %.3g, success %.0f%% (tol %g) in %.0f s",
            label, summary.mean_best, summary.variance, summary.success_pct, cfg.success_tol, time.time() - t0,
        )
        results.append((label, summary))
    write_summary(out / "summary.csv", results)
    emit_convergence(out / "trace.csv", [(label, s.records) for label, s in results])
    write_runs(out / "runs.csv", results)
    return results
