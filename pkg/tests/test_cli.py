import json
import textwrap

import numpy as np
import pytest

from transportlab import bart
from transportlab.cli import main
from transportlab.config import ConfigError, load_config

FAST = """
[run]
seed = 3

[simulate]
n_source = 120
n_target = 80
p = 5
shift = 0.2
truth = linear
beta = 1, -1, 0.5, 0, 0
seed = 4

[data]
source = sim/source.csv
target = sim/target.csv

[bart]
n_trees = 8
n_burn = 30
n_keep = 40

[forest]
n_trees = 20

[eval]
k = 2

[ctree]
min_node = 10
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text(textwrap.dedent(FAST))
    return p


def run(cfg_path, cmd, *extra):
    return main([cmd, "--config", str(cfg_path), *extra])


def body(path):
    """File contents without the comment header."""
    return "".join(ln for ln in path.read_text().splitlines(True) if not ln.startswith(("#", "//")))


def test_simulate_files(cfg_path, tmp_path):
    assert run(cfg_path, "simulate", "--out", "sim") == 0
    sim = tmp_path / "sim"
    lines = body(sim / "source.csv").splitlines()
    assert lines[0] == "row_id,x1,x2,x3,x4,x5,y,S" and len(lines) == 121
    assert len(body(sim / "target.csv").splitlines()) == 81
    merged = body(sim / "merged.csv").splitlines()
    assert len(merged) == 201 and merged[-1].split(",")[-2] == ""
    first = (sim / "source.csv").read_bytes()
    assert run(cfg_path, "simulate", "--out", "sim") == 0
    assert (sim / "source.csv").read_bytes() == first
    assert (sim / "source.csv").read_text().startswith("# transportlab simulate config_hash=")


def test_transport_outputs(cfg_path, tmp_path):
    run(cfg_path, "simulate", "--out", "sim")
    assert run(cfg_path, "transport", "--out", "res") == 0
    res = tmp_path / "res"
    pred = body(res / "predictions.csv").splitlines()
    assert pred[0].split(",")[:8] == [
        "row_id", "post_mean", "post_sd", "ci_low", "ci_high", "outlier_sd", "outlier_mad", "low_flag",
    ]
    assert len(pred) == 81
    rep = json.loads((res / "report.json").read_text())
    assert rep["schema"] == 1 and "ess" in rep and "positivity_violations" in rep
    assert rep["n_target"] == 80
    assert (res / "ctree.txt").exists() and (res / "weights.csv").exists()
    post = bart.load(res / "model.bartpost")
    assert post.n_draws == 40


def test_unit_weights_match_unweighted(cfg_path, tmp_path):
    run(cfg_path, "simulate", "--out", "sim")
    assert run(cfg_path, "transport", "--out", "a", "--set", "weights.mode=unit") == 0
    assert run(cfg_path, "transport", "--out", "b", "--set", "weights.mode=unweighted") == 0
    assert body(tmp_path / "a" / "predictions.csv") == body(tmp_path / "b" / "predictions.csv")


def test_equal_hash_equal_bytes(cfg_path, tmp_path):
    run(cfg_path, "simulate", "--out", "sim")
    run(cfg_path, "transport", "--out", "a")
    run(cfg_path, "transport", "--out", "b")
    for name in ("predictions.csv", "report.json", "weights.csv", "model.bartpost", "ctree.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cv_transport_and_models(cfg_path, tmp_path):
    run(cfg_path, "simulate", "--out", "sim")
    assert run(cfg_path, "cv", "--out", "cv") == 0
    rows = body(tmp_path / "cv" / "comparison.csv").splitlines()
    assert rows[0] == "setting,rmse,mae,r2"
    assert [r.split(",")[0] for r in rows[1:]] == ["unweighted", "weighted", "target_trained"]
    folds = json.loads((tmp_path / "cv" / "folds.json").read_text())
    assert len(folds["folds"]["weighted"]) == 2
    assert run(cfg_path, "cv", "--out", "cvm", "--set", "eval.mode=models") == 0
    rows = body(tmp_path / "cvm" / "comparison.csv").splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["BART", "Random Forest"]


def test_merged_file_and_weights_command(cfg_path, tmp_path):
    run(cfg_path, "simulate", "--out", "sim")
    over = ["--set", "data.source=", "--set", "data.target=", "--set", "data.path=sim/merged.csv"]
    assert run(cfg_path, "weights", "--out", "w", *over) == 0
    rep = json.loads((tmp_path / "w" / "report.json").read_text())
    assert rep["n_source"] == 120 and rep["weights"]["mode"] == "weighted"
    assert abs(np.mean([float(r.split(",")[4]) for r in body(tmp_path / "w" / "weights.csv").splitlines()[1:121]]) - 1) < 1e-12


def test_outliers_and_tree_commands(cfg_path, tmp_path):
    run(cfg_path, "simulate", "--out", "sim")
    run(cfg_path, "transport", "--out", "res")
    pred = tmp_path / "res" / "predictions.csv"
    assert run(cfg_path, "outliers", "--out", "o", "--input", str(pred)) == 0
    assert body(tmp_path / "o" / "outliers.csv").splitlines()[0] == "row_id,post_mean,outlier_sd,outlier_mad"
    lab = tmp_path / "labels.csv"
    ids = [ln.split(",")[0] for ln in body(pred).splitlines()[1:]]
    x1 = {}
    for ln in body(tmp_path / "sim" / "target.csv").splitlines()[1:]:
        f = ln.split(",")
        x1[f[0]] = float(f[1])
    lab.write_text("row_id,flag\n" + "".join(f"{i},{int(x1[i] > 0.2)}\n" for i in ids))
    assert run(cfg_path, "tree", "--out", "t", "--labels", str(lab), "--column", "flag") == 0
    assert "x1" in (tmp_path / "t" / "ctree.txt").read_text()
    assert (tmp_path / "t" / "ctree.dot").exists()


def test_stage_errors_exit_nonzero(cfg_path, tmp_path, capsys):
    assert run(cfg_path, "transport", "--out", "x") == 1  # data files do not exist yet
    assert "stage 'load'" in capsys.readouterr().err
    assert run(cfg_path, "transport", "--set", "bart.beta=2") == 2
    assert run(cfg_path, "transport", "--set", "nosuch.key=1") == 2


def test_config_overrides_and_hash(cfg_path):
    a = load_config(cfg_path)
    b = load_config(cfg_path, ["output.dir=elsewhere"])
    c = load_config(cfg_path, ["run.seed=4"])
    assert a.hash() == b.hash() != c.hash()
    assert a.bart_config().n_trees == 8
    assert str(a.get("weights", "clip")) == "quantile:0.99"
    with pytest.raises(ConfigError):
        load_config(cfg_path, ["bart.n_trees"])
    with pytest.raises(ConfigError):
        load_config(cfg_path, ["bart.n_trees=abc"])


def test_schema_section(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[schema]\nage = numeric\nregion = categorical:north,south\ngrade = ordered:7,8,9\n")
    schema = load_config(p).schema()
    assert [c.name for c in schema] == ["age", "region", "grade"]
    assert schema[1].categories == ("north", "south") and schema[2].ordered
