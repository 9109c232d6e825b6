import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dego.ego as ego_mod
from dego.dgp import DgpConfig, DgpTrainConfig, TrainingFailed
from dego.ego import (
    EgoConfig,
    RunRecord,
    SurrogateSpec,
    inducing_schedule,
    mean_trace,
    repeat_study,
    run_ego,
)
from dego.gp import GpTrainConfig
from dego.infill import AcquisitionSpec
from dego.problems import Problem, get_problem

FAST_GP = GpTrainConfig(budget=200, restarts=0)
FAST_DGP = DgpTrainConfig(maxiter=60, noise_fix_iters=20, warm_maxiter=30)


def fast(**kw):
    base = dict(doe_size=4, infill_count=3, de_pop=8, de_generations=8, gp_train=FAST_GP, dgp_train=FAST_DGP)
    base.update(kw)
    return EgoConfig(**base)


def test_no_infill_keeps_doe_best():
    p = get_problem("xiong_1d")
    r = run_ego(p, fast(infill_count=0), np.random.default_rng(0))
    assert len(r.f) == 4
    assert r.best == pytest.approx(r.f.min())
    assert r.entries == []


def test_gp_run_is_deterministic():
    p = get_problem("xiong_1d")
    a = run_ego(p, fast(), np.random.default_rng(3))
    b = run_ego(p, fast(), np.random.default_rng(3))
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.f, b.f)


def test_run_appends_one_point_per_iteration():
    p = get_problem("xiong_1d")
    r = run_ego(p, fast(infill_count=4), np.random.default_rng(1))
    assert r.X.shape == (8, 1)
    assert [e.index for e in r.entries] == [0, 1, 2, 3]
    assert len(r.best_trace) == 5
    assert all("objective_log_marginal" in e.diagnostics for e in r.entries)


def test_duplicate_proposal_is_jittered(monkeypatch, caplog):
    p = get_problem("xiong_1d")
    X0 = np.array([[0.1], [0.5], [0.9]])
    monkeypatch.setattr(ego_mod, "differential_evolution", lambda *a, **k: (np.array([0.5]), 0.0))
    with caplog.at_level(logging.INFO, logger="dego.ego"):
        r = run_ego(p, fast(doe_size=3, infill_count=1), np.random.default_rng(0), X0=X0)
    added = r.X[-1, 0]
    assert r.entries[0].jittered
    assert 0 < abs(added - 0.5) <= 1e-6
    assert "jittered" in caplog.text


def test_training_failure_stops_run(monkeypatch):
    def boom(*a, **k):
        raise TrainingFailed("no finite bound")

    monkeypatch.setattr(ego_mod, "train_dgp", boom)
    cfg = fast(surrogate=SurrogateSpec("dgp", dgp=DgpConfig(1, 2)))
    r = run_ego(get_problem("xiong_1d"), cfg, np.random.default_rng(0))
    assert r.failed and "no finite bound" in r.error
    assert len(r.f) == 4


def test_dgp_and_mc_backends_run():
    p = get_problem("xiong_1d")
    cfg = fast(
        infill_count=2,
        surrogate=SurrogateSpec("dgp", dgp=DgpConfig(1, 2, inducing=6)),
        acquisition=AcquisitionSpec(prediction="mc", mc_samples=16),
    )
    r = run_ego(p, cfg, np.random.default_rng(0))
    assert not r.failed and len(r.entries) == 2
    assert "objective_elbo" in r.entries[0].diagnostics


def test_layer_schedule_switches_depth(monkeypatch):
    seen = []
    real = ego_mod.init_dgp

    def spy(config, data, rng, m):
        seen.append(config.hidden_layers)
        return real(config, data, rng, m)

    monkeypatch.setattr(ego_mod, "init_dgp", spy)
    cfg = fast(infill_count=3, surrogate=SurrogateSpec("dgp", dgp=DgpConfig(1, 2)), layer_schedule={2: 2})
    run_ego(get_problem("xiong_1d"), cfg, np.random.default_rng(0))
    assert seen == [1, 1, 2]


def test_constrained_problem_uses_expected_violation():
    p = get_problem("constrained_2d")
    cfg = fast(doe_size=6, infill_count=2, objective_surrogate=SurrogateSpec("gp"))
    r = run_ego(p, cfg, np.random.default_rng(2))
    assert r.g.shape == (8, 1)
    assert np.all(np.diff(r.best_trace[np.isfinite(r.best_trace)]) <= 0)


def test_no_feasible_point_gives_inf_best():
    p = Problem("never", 1, lambda X: X[:, 0], (lambda X: np.ones(len(X)),), oracle_grid=11)
    with pytest.warns(UserWarning, match="identical"):
        r = run_ego(p, fast(infill_count=1), np.random.default_rng(0))
    assert r.best == math.inf and r.best_x is None
    s = repeat_study(p, fast(infill_count=0), 2)
    assert math.isnan(s.mean_best) and s.success_pct == 0.0


def test_study_single_run_summary():
    p = get_problem("xiong_1d")
    s = repeat_study(p, fast(), 1, base_seed=4)
    assert s.mean_best == s.records[0].best
    assert s.variance == 0.0


def test_all_runs_at_optimum():
    p = Problem("flat", 1, lambda X: np.full(len(X), 2.0), oracle_grid=11)
    with pytest.warns(UserWarning):
        s = repeat_study(p, fast(infill_count=1), 3)
    assert s.success_pct == 100.0
    assert s.variance == 0.0


def test_mean_trace_ignores_infeasible_runs():
    def rec(vals, feas):
        f = np.array(vals, dtype=float)
        g = np.where(np.array(feas), 0.0, 1.0)[:, None]
        return RunRecord(0, np.zeros((len(f), 1)), f, g, 2)

    a = rec([3.0, 2.0, 1.0], [True, True, True])
    b = rec([5.0, 4.0, 0.0], [False, False, True])
    trace = mean_trace([a, b])
    np.testing.assert_allclose(trace, [2.0, 0.5])
    assert b.best_trace[0] == math.inf


def test_inducing_schedule():
    assert inducing_schedule("dynamic", 12) == 12
    assert inducing_schedule(35, 12) == 35


def test_config_validation():
    with pytest.raises(ValueError):
        EgoConfig(doe_size=1)
    with pytest.raises(ValueError):
        SurrogateSpec("rbf")


@settings(max_examples=10)
@given(st.integers(0, 2**16))
def test_best_trace_is_monotone(seed):
    r = run_ego(get_problem("xiong_1d"), fast(infill_count=2), np.random.default_rng(seed))
    assert np.all(np.diff(r.best_trace) <= 0)


def test_dynamic_inducing_tracks_dataset_and_proposals_stay_in_box(monkeypatch):
    seen = []
    real = ego_mod.train_dgp

    def spy(model, config, rng, warm_start=None):
        out = real(model, config, rng, warm_start=warm_start)
        seen.append([layer.Z.shape[0] for layer in out.layers])
        return out

    monkeypatch.setattr(ego_mod, "train_dgp", spy)
    cfg = fast(infill_count=3, surrogate=SurrogateSpec("dgp", dgp=DgpConfig(1, 2, inducing="dynamic")))
    r = run_ego(get_problem("xiong_1d"), cfg, np.random.default_rng(0))
    assert seen == [[n, n] for n in (4, 5, 6)]
    assert np.all((r.X >= 0.0) & (r.X <= 1.0))
