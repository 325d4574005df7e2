#
# License: See LICENSE.md file
#

import numpy as np
import pytest
from numpy.testing import assert_allclose

from perturbosr.core.network import NetworkSpec, init_network, predict
from perturbosr.core.perturbation import PerturbConfig, make_ensemble
from perturbosr.core.uncertainty import uncertainty_scores
from perturbosr.detect.isda import predict_isda
from perturbosr.detect.pipeline import (
    AblationMode, DetectionResult, MergedDataset, PipelineConfig, Provenance, ablate, default_stages, load_detectors,
    run_pipeline, save_detectors
)
from perturbosr.detect.tree import tree_predict
from perturbosr.metrics import evaluate


class ScriptedStage1:
    """Rejects open rows whose second feature equals 1."""
    def __init__(self):
        self.fitted = None

    def fit(self, features, labels, class_ids):
        self.fitted = (features.copy(), labels.copy(), class_ids.copy())
        return self

    def predict(self, features):
        flagged = (np.atleast_2d(features)[:, 1] == 1).astype(np.int64)
        return flagged, flagged.astype(np.float64)


class ScriptedStage2:
    """Rejects rows whose second feature equals 2."""
    def __init__(self):
        self.fitted = None

    def fit(self, features, labels):
        self.fitted = (features.copy(), labels.copy())
        return self

    def predict(self, features):
        return (np.atleast_2d(features)[:, 1] == 2).astype(np.int64)


MODEL = init_network(NetworkSpec(2, [4], 2), seed=0)
CFG = PipelineConfig(mu_star=1.0, feature_source="raw", stage2_features="raw")
TRAIN_X = np.array([[0.5, 0.1], [1.0, -0.2], [-0.7, 0.3], [0.2, 0.9], [-1.2, -0.4], [0.8, 0.6]])
TRAIN_Y = np.array([1, 2, 1, 2, 1, 2])
OPEN_X = np.array([[0.3, 0.0], [0.4, 1.0], [-0.5, 0.0], [1.5, 0.0], [-0.9, 2.0], [0.1, 0.0]])
MU_OPEN = np.array([0.5, 2.0, 0.8, 3.0, 2.5, 4.0])


def _run(mode, **kwargs):
    stage1, stage2 = ScriptedStage1(), ScriptedStage2()
    results = ablate(mode, MODEL, TRAIN_X, TRAIN_Y, OPEN_X, CFG, stage1=stage1, stage2=stage2, mu_open=MU_OPEN, **kwargs)
    return results, stage1, stage2


def _provenance(results):
    return [r.provenance.value for r in results]


def test_full_pipeline_hand_trace():
    results, stage1, stage2 = _run("full")
    assert _provenance(results) == ["P_L", "Q_L", "P_L", "known", "R_L", "known"]
    base = predict(MODEL, OPEN_X)
    assert [r.final_label for r in results] == [3, 3, 3, base[3], 3, base[5]]
    assert_allclose([r.mu for r in results], MU_OPEN)

    features, labels, class_ids = stage1.fitted
    assert_allclose(features, np.concatenate([TRAIN_X, OPEN_X[[0, 2]]]))
    assert list(labels) == [0] * 6 + [1, 1]
    assert list(class_ids) == list(TRAIN_Y) + [0, 0]

    features, labels = stage2.fitted
    assert_allclose(features, np.concatenate([TRAIN_X, OPEN_X[[0, 2, 1]]]))
    assert list(labels) == [0] * 6 + [1, 1, 1]


def test_run_pipeline_equals_full():
    results = run_pipeline(
        MODEL, TRAIN_X, TRAIN_Y, OPEN_X, CFG, stage1=ScriptedStage1(), stage2=ScriptedStage2(), mu_open=MU_OPEN
    )
    assert results == _run(AblationMode.full)[0]


@pytest.mark.parametrize(
    "mode, expected", [
        ("perturbation_only", ["P_L", "known", "P_L", "known", "known", "known"]),
        ("no_isda", ["P_L", "known", "P_L", "known", "R_L", "known"]),
        ("no_dt", ["P_L", "Q_L", "P_L", "known", "known", "known"]),
    ]
)
def test_ablation_modes(mode, expected):
    results, stage1, stage2 = _run(mode)
    assert _provenance(results) == expected
    if mode == "no_isda":
        assert stage1.fitted is None
        assert list(stage2.fitted[1]) == [0] * 6 + [1, 1]
    if mode == "no_dt":
        assert stage2.fitted is None
    if mode == "perturbation_only":
        assert stage1.fitted is None and stage2.fitted is None


def test_everything_below_threshold():
    stage1, stage2 = ScriptedStage1(), ScriptedStage2()
    results = ablate(
        "full", MODEL, TRAIN_X, TRAIN_Y, OPEN_X, CFG, stage1=stage1, stage2=stage2, mu_open=np.full(6, 0.2)
    )
    assert all(r.provenance is Provenance.P_L and r.final_label == 3 for r in results)
    assert stage1.fitted is None


def test_too_few_rejections_falls_back(log_capture):
    mu = MU_OPEN.copy()
    mu[2] = 1.5
    stage1 = ScriptedStage1()
    results = ablate("full", MODEL, TRAIN_X, TRAIN_Y, OPEN_X, CFG, stage1=stage1, stage2=ScriptedStage2(), mu_open=mu)
    assert _provenance(results) == ["P_L", "known", "known", "known", "known", "known"]
    assert stage1.fitted is None
    assert "falling back" in log_capture.getvalue()


def test_results_are_sorted_by_sample_id():
    ids = [50, 10, 40, 20, 60, 30]
    results, _, _ = _run("full", sample_ids=ids)
    assert [r.sample_id for r in results] == [10, 20, 30, 40, 50, 60]
    by_id = {r.sample_id: r.provenance.value for r in results}
    assert by_id == {50: "P_L", 10: "Q_L", 40: "P_L", 20: "known", 60: "R_L", 30: "known"}


def test_input_errors():
    with pytest.raises(ValueError):
        _run("full", sample_ids=[1, 1, 2, 3, 4, 5])
    with pytest.raises(ValueError):
        _run("full", sample_ids=[1, 2])
    with pytest.raises(ValueError):
        ablate("full", MODEL, TRAIN_X, TRAIN_Y[:3], OPEN_X, CFG, mu_open=MU_OPEN)
    with pytest.raises(ValueError):
        ablate("full", MODEL, TRAIN_X, TRAIN_Y, OPEN_X, CFG, mu_open=MU_OPEN[:2])
    with pytest.raises(ValueError):
        _run("everything")


def test_detection_result():
    assert not DetectionResult(0, 2, Provenance.known).is_rejected
    assert DetectionResult(0, 3, Provenance.R_L).is_rejected


def test_merged_dataset():
    merged = MergedDataset.from_training(TRAIN_X, TRAIN_Y)
    merged.extend(OPEN_X[[0, 2]], "P_L", [0, 2])
    merged.extend(OPEN_X[[1]], "Q_L", [1])
    assert len(merged) == 9
    assert list(merged.rows("Q_L")) == [8]
    assert list(merged.source_index[6:]) == [0, 2, 1]
    assert list(merged.labels) == [0] * 6 + [1] * 3
    with pytest.raises(ValueError):
        merged.extend(OPEN_X[[3]], "train", [3])
    with pytest.raises(AssertionError):
        MergedDataset(TRAIN_X[:1], np.ones(1), ["train"], np.ones(1), np.zeros(1))


@pytest.mark.parametrize(
    "kwargs", [
        dict(mu_star=float("inf")),
        dict(h1=0),
        dict(gamma=0.0),
        dict(feature_source="logits"),
        dict(stage2_features="all"),
        dict(seed=-1),
    ]
)
def test_invalid_pipeline_config(kwargs):
    with pytest.raises(ValueError):
        PipelineConfig(**kwargs)


def _median_config(model, split):
    cfg = PipelineConfig(seed=3)
    X, _ = split.open_set("test")
    mu = uncertainty_scores(model, make_ensemble(model, cfg.perturb), X)
    return PipelineConfig(mu_star=float(np.median(mu)), seed=3)


def test_trained_model_end_to_end(trained_model, tiny_split, tmp_path):
    cfg = _median_config(trained_model, tiny_split)
    X, truth = tiny_split.open_set("test")
    train = tiny_split.train

    stage1, stage2 = default_stages(cfg)
    results = run_pipeline(trained_model, train.features, train.labels, X, cfg, stage1=stage1, stage2=stage2)
    again = run_pipeline(trained_model, train.features, train.labels, X, cfg)
    assert results == again

    unknown = tiny_split.unknown_label
    base = predict(trained_model, X)
    for r in results:
        assert (r.final_label == unknown) == r.is_rejected
        if not r.is_rejected:
            assert r.final_label == base[r.sample_id]
    assert sum(r.provenance is Provenance.P_L for r in results) >= len(results) // 2

    path = tmp_path / "detectors.ckpt"
    save_detectors(str(path), stage1.model, stage2.tree, cfg.stage2_features)
    isda, tree, stage2_features = load_detectors(str(path))
    assert stage2_features == "probability_space"
    features = np.eye(isda.projection.shape[0])
    assert np.array_equal(predict_isda(isda, features)[1], predict_isda(stage1.model, features)[1])
    samples = np.random.default_rng(0).uniform(0, 5, size=(20, 3))
    assert np.array_equal(tree_predict(tree, samples), tree_predict(stage2.tree, samples))


def test_detectors_file_without_models(tmp_path):
    path = tmp_path / "detectors.ckpt"
    save_detectors(str(path), stage2_features="raw")
    assert load_detectors(str(path)) == (None, None, "raw")


def test_default_settings_run_end_to_end(trained_model, tiny_split):
    X, truth = tiny_split.open_set("test")
    results = run_pipeline(trained_model, tiny_split.train.features, tiny_split.train.labels, X, PipelineConfig())
    assert len(results) == len(truth)
    assert {r.final_label for r in results} <= set(range(1, tiny_split.unknown_label + 1))


def test_each_stage_adds_accuracy(blob_model, blob_split):
    X, truth = blob_split.open_set("test")
    perturb = PerturbConfig(num_models=7, noise_scale=3.0, master_seed=0)
    mu = uncertainty_scores(blob_model, make_ensemble(blob_model, perturb), X)
    cfg = PipelineConfig(perturb=perturb, mu_star=float(np.quantile(mu, 0.3)), seed=0)

    train = blob_split.train
    accuracy = {}
    for mode in AblationMode:
        results = ablate(mode, blob_model, train.features, train.labels, X, cfg, mu_open=mu)
        accuracy[mode.value] = evaluate(truth, [r.final_label for r in results], blob_split.unknown_label).accuracy

    assert accuracy["full"] >= accuracy["perturbation_only"] + 0.05
    assert accuracy["full"] >= max(accuracy["no_isda"], accuracy["no_dt"]) - 0.02
