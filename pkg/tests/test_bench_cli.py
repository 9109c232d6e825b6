import csv
from pathlib import Path

import numpy as np
import pytest

import dego.cli as cli
from dego.bench import ConfigError, emit_convergence, load_config, parse_config, run_benchmark
from dego.ego import RunRecord

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TINY = """
problem = xiong_1d
doe_size = 3
infill = 1
repetitions = 2
seed = 5
algorithm = ego
"""


def test_protocol_1d_labels():
    cfg = load_config(CONFIGS / "protocol_1d.cfg")
    assert [label for label, _ in cfg.algorithms] == [
        "EGO",
        "NLEGO 4 knots",
        "DEGO 1HL 2D dynamic",
        "DEGO 1HL 2D 25",
        "DEGO 2HL 2D 25",
    ]
    assert cfg.problem.name == "xiong_1d"


def test_protocol_2d_labels():
    cfg = load_config(CONFIGS / "protocol_2d.cfg")
    assert [label for label, _ in cfg.algorithms] == [
        "EGO",
        "NLEGO 8 knots",
        "DEGO 1HL 10D dynamic",
        "DEGO 2HL 10D dynamic",
        "DEGO 3HL 10D dynamic",
        "DEGO 4HL 10D dynamic",
        "DEGO 3HL 10D 35",
    ]
    _, dego3 = cfg.algorithms[4]
    assert dego3.surrogate.dgp.hidden_layers == 3 and dego3.surrogate.dgp.width == 10
    assert dego3.acquisition.constraint_policy == "expected_violation"
    assert dego3.objective_surrogate.kind == "gp"


def test_block_keys_and_defaults():
    cfg = parse_config(
        """
        problem = xiong_1d   # comment
        width = 3
        algorithm = dego
        layers = 2
        prediction = mc:50
        algorithm = dego
        label = other
        """
    )
    (l1, c1), (l2, c2) = cfg.algorithms
    assert l1 == "DEGO 2HL 3D dynamic" and c1.acquisition.prediction == "mc" and c1.acquisition.mc_samples == 50
    assert l2 == "other" and c2.surrogate.dgp.width == 3 and c2.surrogate.dgp.hidden_layers == 1


@pytest.mark.parametrize(
    "text, line, key",
    [
        ("problem = xiong_1d\n", None, None),
        ("algorithm = ego\n", None, "problem"),
        ("problem = xiong_1d\nalgorithm = sgd\n", 2, "algorithm"),
        ("problem = xiong_1d\ncolour = red\nalgorithm = ego\n", 2, "colour"),
        ("problem = xiong_1d\ninfill = -1\nalgorithm = ego\n", 2, "infill"),
        ("problem = xiong_1d\ninfill = 2\ninfill = 3\nalgorithm = ego\n", 3, "infill"),
        ("problem = xiong_1d\nalgorithm = dego\ninducing = lots\n", 3, "inducing"),
        ("problem = xiong_1d\nalgorithm = dego\nprediction = mc:1\n", 3, "prediction"),
        ("problem = mars\nalgorithm = ego\n", 1, "problem"),
        ("problem = xiong_1d\nalgorithm = ego\nalgorithm = ego\n", 3, "label"),
        ("problem = xiong_1d\njust text\n", 2, None),
    ],
)
def test_config_errors_carry_location(text, line, key):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line
    assert info.value.key == key


def test_emit_convergence(tmp_path):
    r = RunRecord(0, np.zeros((4, 1)), np.array([3.0, 1.0, 2.0, 0.5]), np.zeros((4, 0)), 2)
    path = emit_convergence(tmp_path / "t.csv", [("A", [r])])
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == ["algorithm", "evaluations", "mean_best"]
    assert [(row["evaluations"], float(row["mean_best"])) for row in rows] == [("2", 1.0), ("3", 1.0), ("4", 0.5)]


def test_run_benchmark_writes_outputs(tmp_path):
    results = run_benchmark(parse_config(TINY), tmp_path)
    assert [label for label, _ in results] == ["EGO"]
    summary = list(csv.DictReader(open(tmp_path / "summary.csv")))
    assert list(summary[0]) == ["algorithm", "mean_best", "variance", "success_pct", "repetitions", "seed"]
    assert summary[0]["repetitions"] == "2" and summary[0]["seed"] == "5"
    runs = list(csv.DictReader(open(tmp_path / "runs.csv")))
    assert [int(r["seed"]) for r in runs] == [5, 6]
    assert float(summary[0]["mean_best"]) == pytest.approx(np.mean([float(r["best"]) for r in runs]))


def test_cli_eval_and_optimum(capsys):
    assert cli.main(["eval", "xiong_1d", "0.85"]) == 0
    assert capsys.readouterr().out.strip() == "objective=-0.4875"
    assert cli.main(["eval", "constrained_2d", "0.5", "0.0"]) == 0
    out = capsys.readouterr().out
    assert "constraint0=1.9" in out
    assert cli.main(["optimum", "xiong_1d_c2"]) == 0
    assert capsys.readouterr().out.startswith("value=-0.622")


def test_cli_rejects_bad_points(capsys):
    assert cli.main(["eval", "xiong_1d", "1.5"]) == 2
    assert cli.main(["eval", "constrained_2d", "0.5"]) == 2


def test_cli_run_exit_codes(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(TINY)
    assert cli.main(["run", str(cfg), "--out-dir", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "trace.csv").exists()

    bad = tmp_path / "bad.cfg"
    bad.write_text("problem = xiong_1d\n")
    assert cli.main(["run", str(bad)]) == 2
    assert "config error" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "missing.cfg")]) == 2

    import dego.ego as ego_mod

    def failing(*a, **k):
        raise ego_mod.TrainingFailed("boom")

    monkeypatch.setattr(ego_mod, "fit_gp", lambda *a, **k: failing())
    assert cli.main(["run", str(cfg), "--out-dir", str(tmp_path / "out2")]) == 3
    assert "training failure" in capsys.readouterr().err
