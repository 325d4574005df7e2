#
# License: See LICENSE.md file
#
"""
Predictive uncertainty from a perturbed ensemble, and the threshold rule that rejects low-uncertainty samples as
unknown.

The score of a sample is the Euclidean distance, in logit space, between the ensemble's mean probability vector and
the base model's probability vector. Known samples sit on the learned manifold and react to perturbation, so they
score high; samples at or below the threshold are flagged unknown.
"""

import math
from dataclasses import dataclass

import numpy as np

import perturbosr

from .network import predict_proba

logger = perturbosr.logging.get_logger(__name__)

LOGIT_CLAMP = 1e-7


@dataclass(frozen=True)
class UncertaintyRecord:
    sample_id: int
    mu: float

    def __post_init__(self):
        assert math.isfinite(self.mu) and self.mu >= 0, f"Invalid uncertainty {self.mu} for sample {self.sample_id}"


@dataclass(frozen=True)
class ThresholdConfig:
    mu_star: float

    def __post_init__(self):
        if not math.isfinite(self.mu_star):
            raise ValueError(f"mu_star must be finite, got {self.mu_star}")


def logit_transform(p):
    """
    `log(p) - log(1 - p)` elementwise, with p clamped into [1e-7, 1 - 1e-7].

    ```python
    >>> float(logit_transform(0.5))
    0.0
    >>> round(float(logit_transform(0.9)), 6)
    2.197225

    ```
    """
    p = np.clip(np.asarray(p, dtype=np.float64), LOGIT_CLAMP, 1 - LOGIT_CLAMP)
    return np.log(p) - np.log(1 - p)


def ensemble_mean_proba(ensemble, X):
    """
    Mean of the member probability vectors. Member outputs are sorted per component before summation, so the result
    does not depend on member order. Summing in member index order would be deterministic for one ensemble, but a
    reordered ensemble could round differently and break bit-exact equality.
    """
    stacked = np.stack([predict_proba(ensemble.base, X, params) for params in ensemble.members])
    return np.sort(stacked, axis=0).sum(axis=0) / len(ensemble.members)


def uncertainty_scores(model, ensemble, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.spec.input_dim:
        raise ValueError(f"Expected samples of length {model.spec.input_dim}, got shape {X.shape}")
    base = predict_proba(model, X)
    mean = ensemble_mean_proba(ensemble, X)
    return np.linalg.norm(logit_transform(mean) - logit_transform(base), axis=1)


def predictive_uncertainty(model, ensemble, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"Expected a single sample, got shape {x.shape}")
    return float(uncertainty_scores(model, ensemble, x)[0])


def score_records(model, ensemble, X, sample_ids=None):
    mu = uncertainty_scores(model, ensemble, X)
    if sample_ids is None:
        sample_ids = range(len(mu))
    return [UncertaintyRecord(int(i), float(m)) for i, m in zip(sample_ids, mu)]


def threshold_split(records, cfg):
    """
    Partitions sample ids into (at or below `mu_star`, above `mu_star`), keeping record order.
    """
    seen = set()
    lower, upper = [], []
    for record in records:
        if record.sample_id in seen:
            raise ValueError(f"Duplicate sample id {record.sample_id}")
        seen.add(record.sample_id)
        if record.mu <= cfg.mu_star:
            lower.append(record.sample_id)
        else:
            upper.append(record.sample_id)
    logger.debug("Threshold %g rejects %d of %d samples", cfg.mu_star, len(lower), len(seen))
    return lower, upper
