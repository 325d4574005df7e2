#
# License: See LICENSE.md file
#
"""
Evaluation of the K+1-way decision: accuracy, macro precision/recall/F1 and the true detection rate (recall of the
unknown class), plus the diagnostics of how well the uncertainty score separates known from unknown samples.
"""

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import rankdata

import perturbosr

logger = perturbosr.logging.get_logger(__name__)

REPORT_COLUMNS = ("Accuracy", "Precision", "Recall", "F1", "TDR")


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tdr: float
    confusion: np.ndarray
    """Rows are true classes 1..K+1, columns predicted classes."""
    unknown_label: int

    def __post_init__(self):
        for name in ("accuracy", "precision", "recall", "f1", "tdr"):
            value = getattr(self, name)
            assert 0.0 <= value <= 1.0, f"{name} out of range: {value}"
        assert self.confusion.shape == (self.unknown_label, self.unknown_label)


def evaluate(truth, predicted, unknown_label=None):
    """
    Scores predicted labels against the truth. Classes absent from both are left out of the macro averages; an empty
    precision or recall denominator counts as 0.

    ```python
    >>> report = evaluate([1, 2, 3, 3], [1, 2, 3, 1])
    >>> report.accuracy, report.tdr
    (0.75, 0.5)

    ```
    """
    truth = np.asarray(truth, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if truth.shape != predicted.shape:
        raise ValueError(f"{len(truth)} true labels but {len(predicted)} predictions")
    if len(truth) == 0:
        raise ValueError("Cannot evaluate an empty result")
    if unknown_label is None:
        unknown_label = int(max(truth.max(), predicted.max()))
    if min(truth.min(), predicted.min()) < 1 or max(truth.max(), predicted.max()) > unknown_label:
        raise ValueError(f"Labels must be in 1..{unknown_label}")

    confusion = np.zeros((unknown_label, unknown_label), dtype=np.int64)
    np.add.at(confusion, (truth - 1, predicted - 1), 1)
    true_counts = confusion.sum(axis=1)
    pred_counts = confusion.sum(axis=0)
    hits = np.diag(confusion)

    present = (true_counts > 0) | (pred_counts > 0)
    precision = np.where(pred_counts > 0, hits / np.maximum(pred_counts, 1), 0.0)
    recall = np.where(true_counts > 0, hits / np.maximum(true_counts, 1), 0.0)
    denominator = precision + recall
    f1 = np.where(denominator > 0, 2 * precision * recall / np.where(denominator > 0, denominator, 1.0), 0.0)

    if true_counts[unknown_label - 1] == 0:
        logger.warning("No true unknown samples; the detection rate is reported as 0", unknown_label=unknown_label)
        tdr = 0.0
    else:
        tdr = float(recall[unknown_label - 1])

    return EvalReport(
        float(np.trace(confusion) / len(truth)),
        float(precision[present].mean()),
        float(recall[present].mean()),
        float(f1[present].mean()),
        tdr,
        confusion,
        int(unknown_label),
    )


def report_row(report):
    return dict(zip(REPORT_COLUMNS, (report.accuracy, report.precision, report.recall, report.f1, report.tdr)))


def format_report(report):
    """
    Aligned text table of the five metrics followed by the confusion matrix.
    """
    row = report_row(report)
    header = "  ".join(name.rjust(9) for name in REPORT_COLUMNS)
    values = "  ".join(f"{row[name]:9.4f}" for name in REPORT_COLUMNS)
    labels = [str(i) for i in range(1, report.unknown_label)] + [f"{report.unknown_label}(unk)"]
    confusion = pd.DataFrame(report.confusion, index=labels, columns=labels)
    return f"{header}\n{values}\n\nconfusion (rows: truth, columns: prediction)\n{confusion.to_string()}\n"


def separation_auc(mu_known, mu_unknown):
    """
    Probability that a random known sample scores a higher uncertainty than a random unknown one, ties counting half.

    ```python
    >>> separation_auc([1.0, 3.0], [2.0])
    0.5

    ```
    """
    mu_known = np.asarray(mu_known, dtype=np.float64).ravel()
    mu_unknown = np.asarray(mu_unknown, dtype=np.float64).ravel()
    if len(mu_known) == 0 or len(mu_unknown) == 0:
        raise ValueError("Both groups need at least one uncertainty value")
    ranks = rankdata(np.concatenate([mu_known, mu_unknown]))
    n_known = len(mu_known)
    wins = ranks[:n_known].sum() - n_known * (n_known + 1) / 2.0
    return float(wins / (n_known * len(mu_unknown)))


def density_histogram(mu, is_unknown, bins=30):
    """
    Per-group normalised histograms over shared bin edges. An empty group has zero density everywhere.
    """
    mu = np.asarray(mu, dtype=np.float64).ravel()
    is_unknown = np.asarray(is_unknown, dtype=bool).ravel()
    if len(mu) != len(is_unknown):
        raise ValueError(f"{len(mu)} values but {len(is_unknown)} group tags")
    if len(mu) == 0:
        raise ValueError("No uncertainty values")
    if bins < 1:
        raise ValueError(f"bins must be positive, got {bins}")
    edges = np.histogram_bin_edges(mu, bins=bins)

    def density(values):
        if len(values) == 0:
            return np.zeros(len(edges) - 1)
        return np.histogram(values, bins=edges, density=True)[0]

    return pd.DataFrame({
        "bin_left": edges[:-1],
        "bin_right": edges[1:],
        "known_density": density(mu[~is_unknown]),
        "unknown_density": density(mu[is_unknown]),
    })


def support_overlap(table):
    """Fraction of occupied bins that both groups occupy."""
    known = table["known_density"].to_numpy() > 0
    unknown = table["unknown_density"].to_numpy() > 0
    occupied = known | unknown
    if not occupied.any():
        return 0.0
    return float((known & unknown).sum() / occupied.sum())
