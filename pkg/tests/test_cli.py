#
# License: See LICENSE.md file
#

import argparse
import json
import os

import numpy as np
import pandas as pd
import pytest

from perturbosr.__main__ import main, parser
from perturbosr.commands.gridsearch import GridSearch, best_index, evaluate_cell, run_cells, validation_tasks
from perturbosr.commands.manager import COMMANDS, get_command
from perturbosr.config import GridSpec, config_from_dict, load_config
from perturbosr.core.perturbation import make_ensemble
from perturbosr.core.uncertainty import uncertainty_scores
from perturbosr.utils import read_text_header

CONFIG = """
seed = 3

[data.synth]
num_known = 3
num_unknown = 2
per_class = 30
dim = 4

[network]
hidden_dims = [8]

[train]
epochs = 20
batch_size = 32
learning_rate = 0.01

[pipeline]
mu_star = 0.5

[pipeline.tree]
min_samples_leaf = 2

[grid]
num_models = [3]
noise_scale = [0.3]
mu_star = [0.5, 1.0]
h2 = [1]
"""


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("config") / "run.toml"
    path.write_text(CONFIG)
    return str(path)


def _cli(config_file, output_dir, command, *extra):
    return main([command, "-c", config_file, "--output-dir", str(output_dir), *extra])


@pytest.fixture(scope="module")
def trained_run(config_file, tmp_path_factory):
    output_dir = tmp_path_factory.mktemp("run")
    assert _cli(config_file, output_dir, "synth") == 0
    assert _cli(config_file, output_dir, "train", "--loss-history") == 0
    return output_dir


def test_full_chain(config_file, trained_run, capsys):
    for name in ("dataset.csv", "split.json", "model.ckpt", "loss.csv", "synth.meta.json", "train.meta.json"):
        assert os.path.isfile(trained_run / name), name

    assert _cli(config_file, trained_run, "uncertainty") == 0
    assert _cli(config_file, trained_run, "detect") == 0
    assert _cli(config_file, trained_run, "eval") == 0
    assert "Accuracy" in capsys.readouterr().out

    kind, fields, skip = read_text_header(str(trained_run / "results.csv"))
    assert kind == "results"
    assert fields["unknown_label"] == "4"
    results = pd.read_csv(trained_run / "results.csv", skiprows=skip)
    assert list(results.columns) == ["sample_id", "true_label", "final_label", "provenance", "mu"]
    assert set(results["provenance"]) <= {"P_L", "Q_L", "R_L", "known"}
    assert ((results["final_label"] == 4) == (results["provenance"] != "known")).all()

    uncertainty = pd.read_csv(trained_run / "uncertainty.csv", comment="#")
    assert len(uncertainty) == len(results)
    assert (uncertainty["mu"] >= 0).all()
    assert os.path.isfile(trained_run / "report.csv")


def test_experiments(config_file, trained_run, capsys):
    assert _cli(config_file, trained_run, "ablate") == 0
    ablation = pd.read_csv(trained_run / "ablation.csv", comment="#")
    assert ablation["mode"].tolist() == ["perturbation_only", "no_isda", "no_dt", "full"]

    assert _cli(config_file, trained_run, "sensitivity") == 0
    sensitivity = pd.read_csv(trained_run / "sensitivity.csv", comment="#")
    assert len(sensitivity) == 1 + 1 + 2 + 1

    assert _cli(config_file, trained_run, "gridsearch") == 0
    assert "best:" in capsys.readouterr().out
    grid = pd.read_csv(trained_run / "grid.csv", comment="#")
    assert len(grid) == 2
    assert grid["best"].sum() == 1
    assert os.path.isfile(trained_run / "grid_best.json")


def test_parallel_grid_matches_serial(config_file, trained_run, tmp_path):
    for name in ("dataset.csv", "split.json", "model.ckpt"):
        (tmp_path / name).write_bytes((trained_run / name).read_bytes())
    assert _cli(config_file, tmp_path, "gridsearch", "--jobs", "2") == 0
    parallel = (tmp_path / "grid.csv").read_bytes()
    assert _cli(config_file, tmp_path, "gridsearch", "--jobs", "1") == 0
    assert (tmp_path / "grid.csv").read_bytes() == parallel


def test_runs_are_reproducible(config_file, trained_run, tmp_path):
    for command in ("synth", "train", "detect"):
        assert _cli(config_file, tmp_path, command) == 0
    assert _cli(config_file, trained_run, "detect") == 0
    assert (tmp_path / "model.ckpt").read_bytes() == (trained_run / "model.ckpt").read_bytes()
    assert (tmp_path / "results.csv").read_bytes() == (trained_run / "results.csv").read_bytes()


def test_density(config_file, trained_run):
    assert _cli(config_file, trained_run, "uncertainty") == 0
    assert _cli(config_file, trained_run, "plot-density", "--bins", "10") == 0
    kind, fields, skip = read_text_header(str(trained_run / "density.csv"))
    assert kind == "density" and fields["bins"] == "10"
    assert 0.0 <= float(fields["support_overlap"]) <= 1.0


def test_density_svg(config_file, trained_run):
    pytest.importorskip("matplotlib")
    assert _cli(config_file, trained_run, "uncertainty") == 0
    assert _cli(config_file, trained_run, "plot-density", "--svg") == 0
    first = (trained_run / "density.svg").read_bytes()
    assert b"<svg" in first
    assert _cli(config_file, trained_run, "plot-density", "--svg") == 0
    assert (trained_run / "density.svg").read_bytes() == first


def test_eval_of_handwritten_results(config_file, tmp_path, capsys):
    path = tmp_path / "mine.csv"
    path.write_text(
        "# perturbosr results v1 unknown_label=3\n"
        "sample_id,true_label,final_label,provenance,mu\n"
        "0,1,1,known,5.0\n"
        "1,2,2,known,6.0\n"
        "2,3,3,P_L,0.1\n"
    )
    assert _cli(config_file, tmp_path, "eval", "--results", str(path)) == 0
    report = pd.read_csv(tmp_path / "report.csv", comment="#")
    assert report.loc[0, "Accuracy"] == 1.0
    assert report.loc[0, "TDR"] == 1.0


def test_invalid_config_exits_with_field_path(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[train]\nepochs = 0\n")
    assert _cli(str(path), tmp_path, "synth") == 1
    assert "train.epochs" in capsys.readouterr().err


def test_missing_inputs(config_file, tmp_path, capsys):
    assert _cli(config_file, tmp_path, "detect") == 1
    assert "dataset.csv" in capsys.readouterr().err


def test_parser():
    with pytest.raises(SystemExit):
        parser.parse_args(["--version"])
    with pytest.raises(SystemExit):
        parser.parse_args([])
    args = parser.parse_args(["gridsearch", "--jobs", "3", "--seed", "5"])
    assert args.jobs == 3 and args.seed == 5
    assert {c.name for c in COMMANDS} == {
        "synth", "train", "uncertainty", "detect", "eval", "gridsearch", "plot-density", "ablate", "sensitivity"
    }
    with pytest.raises(KeyError):
        get_command("fly")


def _copy_run(source, target):
    for name in ("dataset.csv", "split.json", "model.ckpt"):
        (target / name).write_bytes((source / name).read_bytes())


def test_grid_best_is_the_best_single_cell(config_file, trained_run, tmp_path):
    _copy_run(trained_run, tmp_path)
    assert _cli(config_file, tmp_path, "gridsearch") == 0
    grid = pd.read_csv(tmp_path / "grid.csv", comment="#")
    with open(tmp_path / "grid_best.json") as f:
        best = json.load(f)

    config = load_config(config_file, output_dir=str(tmp_path))
    command = GridSearch(config, argparse.Namespace(jobs=1))
    configs = [config.with_cell(**cell) for cell in config.grid.cells()]
    rows = [evaluate_cell(task) for task in validation_tasks(command, configs)]

    assert grid["Accuracy"].tolist() == pytest.approx([row["Accuracy"] for row in rows])
    top = max(row["Accuracy"] for row in rows)
    assert best["index"] == [row["Accuracy"] for row in rows].index(top)
    assert best["metrics"]["Accuracy"] == pytest.approx(top)
    assert best["cell"] == config.grid.cells()[best["index"]]


def test_identical_cells_keep_the_first(config_file, trained_run, tmp_path):
    _copy_run(trained_run, tmp_path)
    path = tmp_path / "tied.toml"
    path.write_text(CONFIG.replace("mu_star = [0.5, 1.0]", "mu_star = [0.5, 0.5, 0.5]"))
    assert _cli(str(path), tmp_path, "gridsearch") == 0
    grid = pd.read_csv(tmp_path / "grid.csv", comment="#")
    assert grid["Accuracy"].nunique() == 1
    assert grid["best"].tolist() == [1, 0, 0]
    with open(tmp_path / "grid_best.json") as f:
        assert json.load(f)["index"] == 0


def test_best_index():
    assert best_index([{"Accuracy": 0.8}, {"Accuracy": 0.8}]) == 0
    assert best_index([{"Accuracy": 0.2}, {"Accuracy": 0.9}, {"Accuracy": 0.9}]) == 1
    assert best_index([{"Accuracy": 0.2, "TDR": 1.0}, {"Accuracy": 0.9, "TDR": 0.0}], objective="TDR") == 0
    with pytest.raises(ValueError):
        best_index([])


def test_absurd_noise_loses_the_grid(blob_model, blob_split):
    X, truth = blob_split.open_set("val")
    config = config_from_dict({"pipeline": {"perturb": {"num_models": 7, "noise_scale": 3.0}}})
    mu = uncertainty_scores(blob_model, make_ensemble(blob_model, config.pipeline.perturb), X)
    grid = GridSpec((7, ), (3.0, 1e6), (float(np.quantile(mu, 0.3)), ), (1, ))

    train = blob_split.train
    unknown = blob_split.unknown_label
    tasks = [(blob_model, train.features, train.labels, X, truth, unknown, config.with_cell(**cell).pipeline)
             for cell in grid.cells()]
    rows = run_cells(tasks)
    assert best_index(rows) == 0
    assert rows[0]["Accuracy"] > rows[1]["Accuracy"]
