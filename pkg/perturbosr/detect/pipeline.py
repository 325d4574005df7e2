#
# License: See LICENSE.md file
#
"""
Two-stage unknown detection.

Open samples whose predictive uncertainty is at or below `mu_star` are rejected first (P_L). The training set and the
rejected samples form a binary merged pool on which the discriminant stage is fitted; it rejects a second group (Q_L)
among the remaining samples. The pool grows by Q_L and a decision tree, fitted on it, rejects a third group (R_L).
Whatever survives all three tests keeps the base classifier's prediction.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

import perturbosr
from perturbosr.core.network import argmax_label, embed, predict_proba
from perturbosr.core.perturbation import PerturbConfig, make_ensemble
from perturbosr.core.uncertainty import ThresholdConfig, UncertaintyRecord, threshold_split, uncertainty_scores
from perturbosr.utils import IntIOWrapper, derive_seed, read_state_header, write_state_header

from .isda import FEATURE_SOURCES, IsdaModel, fit_isda, predict_isda
from .tree import DtConfig, TreeNode, fit_tree, tree_predict

logger = perturbosr.logging.get_logger(__name__)

STAGE2_FEATURES = ("probability_space", "raw")
ORIGINS = ("train", "P_L", "Q_L")


class Provenance(Enum):
    P_L = "P_L"
    Q_L = "Q_L"
    R_L = "R_L"
    known = "known"


class AblationMode(Enum):
    perturbation_only = "perturbation_only"
    no_isda = "no_isda"
    no_dt = "no_dt"
    full = "full"


@dataclass(frozen=True)
class PipelineConfig:
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    mu_star: float = 4.5
    h1: int = 2
    h2: int = 1
    gamma: float = 1e-4
    dt: DtConfig = field(default_factory=DtConfig)
    feature_source: str = "embedding"
    stage2_features: str = "probability_space"
    seed: int = 0

    def __post_init__(self):
        ThresholdConfig(self.mu_star)
        if self.h1 < 1 or self.h2 < 1:
            raise ValueError(f"h1 and h2 must be positive, got h1={self.h1}, h2={self.h2}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.feature_source not in FEATURE_SOURCES:
            raise ValueError(f"Unknown feature source: {self.feature_source}")
        if self.stage2_features not in STAGE2_FEATURES:
            raise ValueError(f"Unknown stage-2 feature set: {self.stage2_features}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class DetectionResult:
    sample_id: int
    final_label: int
    provenance: Provenance
    mu: float = float("nan")

    @property
    def is_rejected(self):
        return self.provenance is not Provenance.known


@dataclass
class MergedDataset:
    """
    The binary pool the detectors are fitted on: training rows labelled 0, rejected open rows labelled 1. Rows are only
    ever appended.
    """
    features: np.ndarray
    labels: np.ndarray
    origins: list
    class_ids: np.ndarray
    """Original class id of training rows, 0 for rejected rows."""
    source_index: np.ndarray
    """Row index into the training set (origin train) or the open set (otherwise)."""
    def __post_init__(self):
        assert len(self.features) == len(self.labels) == len(self.origins) == len(self.class_ids)
        for origin, label in zip(self.origins, self.labels):
            assert origin in ORIGINS, f"Unknown origin {origin}"
            assert label == (0 if origin == "train" else 1), f"{origin} row labelled {label}"

    def __len__(self):
        return len(self.labels)

    @classmethod
    def from_training(cls, features, class_ids):
        n = len(features)
        return cls(
            np.asarray(features, dtype=np.float64),
            np.zeros(n, dtype=np.int64),
            ["train"] * n,
            np.asarray(class_ids, dtype=np.int64),
            np.arange(n),
        )

    def extend(self, features, origin, source_index):
        if origin == "train":
            raise ValueError("Training rows can only enter through from_training")
        features = np.asarray(features, dtype=np.float64).reshape(-1, self.features.shape[1])
        n = len(features)
        self.features = np.concatenate([self.features, features])
        self.labels = np.concatenate([self.labels, np.ones(n, dtype=np.int64)])
        self.origins = self.origins + [origin] * n
        self.class_ids = np.concatenate([self.class_ids, np.zeros(n, dtype=np.int64)])
        self.source_index = np.concatenate([self.source_index, np.asarray(source_index, dtype=np.int64)])
        self.__post_init__()

    def rows(self, origin):
        return np.array([i for i, o in enumerate(self.origins) if o == origin], dtype=np.int64)


class IsdaDetector:
    """
    Stage-one detector. `fit(features, labels, class_ids)` and `predict(features) -> (labels, posterior_unknown)` are
    the whole interface the pipeline uses, so tests can pass a scripted stand-in.
    """
    def __init__(self, h1, h2, gamma, seed, feature_source="embedding"):
        self.h1 = h1
        self.h2 = h2
        self.gamma = gamma
        self.seed = seed
        self.feature_source = feature_source
        self.model = None

    def fit(self, features, labels, class_ids):
        self.model = fit_isda(
            features, labels, class_ids, self.h1, self.h2, self.gamma, self.seed, feature_source=self.feature_source
        )
        return self

    def predict(self, features):
        if self.model is None:
            raise ValueError("Stage-one detector used before fitting")
        return predict_isda(self.model, np.atleast_2d(features))


class TreeDetector:
    def __init__(self, cfg, seed):
        self.cfg = cfg
        self.seed = seed
        self.tree = None

    def fit(self, features, labels):
        self.tree = fit_tree(features, labels, self.cfg, self.seed)
        return self

    def predict(self, features):
        if self.tree is None:
            raise ValueError("Stage-two detector used before fitting")
        return tree_predict(self.tree, np.atleast_2d(features))


def default_stages(cfg):
    stage1 = IsdaDetector(cfg.h1, cfg.h2, cfg.gamma, derive_seed(cfg.seed, "isda"), cfg.feature_source)
    stage2 = TreeDetector(cfg.dt, derive_seed(cfg.seed, "tree"))
    return stage1, stage2


def _features(model, X, source):
    return embed(model, X) if source == "embedding" else X


def ablate(mode, model, train_X, train_y, open_X, cfg, sample_ids=None, stage1=None, stage2=None, mu_open=None):
    """
    Runs the detector with some stages switched off.

    - `perturbation_only`: only the uncertainty threshold rejects.
    - `no_isda`: the stage-one detector is skipped; every sample above the threshold goes to the tree, which is fitted
      on the training rows and P_L.
    - `no_dt`: the tree is skipped; samples the stage-one detector keeps get the base prediction.
    - `full`: both stages, identical to `run_pipeline`.

    `stage1`/`stage2` replace the default detectors and `mu_open` replaces the ensemble scores of the open samples.
    Results are ordered by sample id.

    ```python
    >>> from perturbosr.core.network import NetworkSpec, init_network
    >>> model = init_network(NetworkSpec(2, [4], 2), seed=0)
    >>> results = ablate("perturbation_only", model, np.zeros((4, 2)), [1, 2, 1, 2], np.ones((3, 2)),
    ...                  PipelineConfig(mu_star=1e9))
    >>> [(r.final_label, r.provenance.value) for r in results]
    [(3, 'P_L'), (3, 'P_L'), (3, 'P_L')]

    ```
    """
    mode = AblationMode(mode)
    open_X = np.atleast_2d(np.asarray(open_X, dtype=np.float64))
    train_X = np.atleast_2d(np.asarray(train_X, dtype=np.float64))
    train_y = np.asarray(train_y, dtype=np.int64)
    n_open = len(open_X)
    sample_ids = np.arange(n_open) if sample_ids is None else np.asarray(sample_ids, dtype=np.int64)
    if len(sample_ids) != n_open:
        raise ValueError(f"{n_open} open samples but {len(sample_ids)} sample ids")
    if len(np.unique(sample_ids)) != n_open:
        raise ValueError("Sample ids must be unique")
    if len(train_X) != len(train_y):
        raise ValueError(f"{len(train_X)} training samples but {len(train_y)} labels")
    if stage1 is None or stage2 is None:
        default1, default2 = default_stages(cfg)
        stage1 = default1 if stage1 is None else stage1
        stage2 = default2 if stage2 is None else stage2

    unknown_label = model.num_classes + 1
    ensemble = make_ensemble(model, cfg.perturb)
    if mu_open is None:
        mu_open = uncertainty_scores(model, ensemble, open_X) if n_open else np.zeros(0)
    mu_open = np.asarray(mu_open, dtype=np.float64)
    if len(mu_open) != n_open:
        raise ValueError(f"{n_open} open samples but {len(mu_open)} uncertainty values")

    labels = np.zeros(n_open, dtype=np.int64)
    provenance = [Provenance.known] * n_open

    # Stage 0: the threshold rule, keyed by row position
    records = [UncertaintyRecord(i, float(m)) for i, m in enumerate(mu_open)]
    p_l, p_r = threshold_split(records, ThresholdConfig(cfg.mu_star))
    p_l = np.asarray(p_l, dtype=np.int64)
    p_r = np.asarray(p_r, dtype=np.int64)
    labels[p_l] = unknown_label
    for i in p_l:
        provenance[i] = Provenance.P_L

    if mode in (AblationMode.full, AblationMode.no_dt) and len(p_l) < max(cfg.h1, 2):
        logger.warning(
            "Too few threshold rejections to fit the discriminant stage; falling back to the threshold rule",
            rejected=len(p_l),
            required=max(cfg.h1, 2),
            mode=mode.value,
        )
        mode = AblationMode.perturbation_only

    remainder = p_r
    if not len(p_r):
        logger.debug("Every open sample was rejected by the threshold; detector stages are skipped")
    elif mode is not AblationMode.perturbation_only:
        remainder = _two_stage(
            mode, model, ensemble, train_X, train_y, open_X, mu_open, p_l, p_r, cfg, stage1, stage2, labels,
            provenance
        )

    if len(remainder):
        labels[remainder] = np.atleast_1d(argmax_label(predict_proba(model, open_X[remainder])))

    counts = {p: provenance.count(p) for p in Provenance}
    logger.info(
        "Detection finished",
        mode=mode.value,
        P_L=counts[Provenance.P_L],
        Q_L=counts[Provenance.Q_L],
        R_L=counts[Provenance.R_L],
        known=counts[Provenance.known],
    )
    results = []
    for i in np.argsort(sample_ids, kind="stable"):
        assert (provenance[i] is Provenance.known) == (labels[i] != unknown_label), "Label and provenance disagree"
        results.append(DetectionResult(int(sample_ids[i]), int(labels[i]), provenance[i], float(mu_open[i])))
    return results


def _two_stage(mode, model, ensemble, train_X, train_y, open_X, mu_open, p_l, p_r, cfg, stage1, stage2, labels,
               provenance):
    # Returns the open rows that survive every enabled stage
    unknown_label = model.num_classes + 1
    train_f = _features(model, train_X, cfg.feature_source)
    open_f = _features(model, open_X, cfg.feature_source)
    merged = MergedDataset.from_training(train_f, train_y)
    merged.extend(open_f[p_l], "P_L", p_l)

    q_r = p_r
    use_isda = mode in (AblationMode.full, AblationMode.no_dt)
    if use_isda:
        stage1.fit(merged.features, merged.labels, merged.class_ids)
        if len(p_r):
            isda_labels, _ = stage1.predict(open_f[p_r])
            isda_labels = np.atleast_1d(isda_labels)
            q_l = p_r[isda_labels == 1]
            q_r = p_r[isda_labels != 1]
            labels[q_l] = unknown_label
            for i in q_l:
                provenance[i] = Provenance.Q_L
            merged.extend(open_f[q_l], "Q_L", q_l)
        logger.debug("Stage one rejected %d of %d samples", len(p_r) - len(q_r), len(p_r))

    if mode is AblationMode.no_dt:
        return q_r

    if cfg.stage2_features == "raw":
        pool = merged.features
        candidates = open_f[q_r]
    else:
        pool = _probability_space(model, ensemble, stage1 if use_isda else None, merged, train_X, open_X, mu_open)
        candidates = np.empty((0, 3))
        if len(q_r):
            posterior = np.atleast_1d(stage1.predict(open_f[q_r])[1]) if use_isda else np.zeros(len(q_r))
            max_prob = predict_proba(model, open_X[q_r]).max(axis=1)
            candidates = np.column_stack([posterior, mu_open[q_r], max_prob])

    stage2.fit(pool, merged.labels)
    if not len(q_r):
        return q_r
    tree_labels = np.atleast_1d(stage2.predict(candidates))
    r_l = q_r[tree_labels == 1]
    labels[r_l] = unknown_label
    for i in r_l:
        provenance[i] = Provenance.R_L
    logger.debug("Stage two rejected %d of %d samples", len(r_l), len(q_r))
    return q_r[tree_labels != 1]


def _probability_space(model, ensemble, stage1, merged, train_X, open_X, mu_open):
    # [posterior_unknown, mu, max base probability] for every pool row; training mu uses the open-set ensemble
    n = len(merged)
    train_rows = merged.rows("train")
    open_rows = np.setdiff1d(np.arange(n), train_rows)
    mu = np.empty(n)
    max_prob = np.empty(n)
    source_train = merged.source_index[train_rows]
    mu[train_rows] = uncertainty_scores(model, ensemble, train_X[source_train])
    max_prob[train_rows] = predict_proba(model, train_X[source_train]).max(axis=1)
    source_open = merged.source_index[open_rows]
    mu[open_rows] = mu_open[source_open]
    if len(open_rows):
        max_prob[open_rows] = predict_proba(model, open_X[source_open]).max(axis=1)
    posterior = np.zeros(n) if stage1 is None else np.atleast_1d(stage1.predict(merged.features)[1])
    return np.column_stack([posterior, mu, max_prob])


def run_pipeline(model, train_X, train_y, open_X, cfg, sample_ids=None, stage1=None, stage2=None, mu_open=None):
    """
    Labels every open sample with a known class (1..K) or the unknown label K+1. Known labels only ever come from the
    base classifier.
    """
    return ablate(
        AblationMode.full,
        model,
        train_X,
        train_y,
        open_X,
        cfg,
        sample_ids=sample_ids,
        stage1=stage1,
        stage2=stage2,
        mu_open=mu_open,
    )


def save_detectors(path, isda_model=None, tree=None, stage2_features="probability_space"):
    """
    Writes the fitted detectors. Either may be absent (threshold-only fallback, ablation modes).
    """
    with open(path, "wb") as fh:
        f = IntIOWrapper(fh)
        write_state_header(f)
        f.write_string(stage2_features)
        f.write(0 if isda_model is None else 1)
        if isda_model is not None:
            isda_model.save_state(f)
        f.write(0 if tree is None else 1)
        if tree is not None:
            tree.save_state(f)
        f.flush()
    logger.info("Detectors saved in %s", path)


def load_detectors(path):
    """Returns `(isda_model or None, tree or None, stage2_features)`."""
    with open(path, "rb") as fh:
        f = IntIOWrapper(fh)
        state_version = read_state_header(f)
        stage2_features = f.read_string()
        isda_model = IsdaModel.load_state(f, state_version) if f.read() else None
        tree = TreeNode.load_state(f, state_version) if f.read() else None
    return isda_model, tree, stage2_features
