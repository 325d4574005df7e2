#
# License: See LICENSE.md file
#
"""
Stage-one detector: subclass discriminant analysis with soft (mixture) subclass assignment, followed by a Gaussian
naive Bayes head that separates known (0) from unknown (1).

Each known class is modelled by `h2` mixture components and the unknown pool by `h1`. The soft memberships define
within- and between-subclass scatter matrices, whose regularised generalised eigenvectors give a projection that
pulls subclasses apart. The naive Bayes head is trained on the projected features.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

import perturbosr
from perturbosr.utils import derive_seed

from .gmm import GmmModel, fit_gmm, responsibilities

logger = perturbosr.logging.get_logger(__name__)

MIN_SUBCLASS_MASS = 1e-8
VAR_SMOOTHING = 1e-9
FEATURE_SOURCES = ("embedding", "raw")


def scatter_matrices(features, subclass_resp):
    """
    Soft within-subclass and between-subclass scatter.

    `subclass_resp` holds one row per sample with its memberships over all subclasses of all classes. Subclasses
    with a total membership below 1e-8 are left out of both sums.
    """
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    R = np.atleast_2d(np.asarray(subclass_resp, dtype=np.float64))
    if len(X) != len(R):
        raise ValueError(f"{len(X)} samples but {len(R)} responsibility rows")

    mass = R.sum(axis=0)
    keep = mass >= MIN_SUBCLASS_MASS
    R = R[:, keep]
    mass = mass[keep]
    means = (R.T @ X) / mass[:, None]
    global_mean = X.mean(axis=0)

    dim = X.shape[1]
    s_w = np.zeros((dim, dim))
    for j in range(len(mass)):
        centred = X - means[j]
        s_w += (centred * R[:, j:j + 1]).T @ centred
    between = means - global_mean
    s_b = (between * mass[:, None]).T @ between

    # Symmetrise away rounding asymmetry
    return 0.5 * (s_w + s_w.T), 0.5 * (s_b + s_b.T)


def fit_projection(s_w, s_b, gamma, d):
    """
    Top-`d` eigenvectors of `(S_w + gamma I)^-1 S_b`, as unit columns with their largest-magnitude entry positive.
    """
    s_w = np.asarray(s_w, dtype=np.float64)
    s_b = np.asarray(s_b, dtype=np.float64)
    dim = s_w.shape[0]
    if d < 1:
        raise ValueError("Projection dimension is 0 (a single subclass); skip the projection instead")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    d = min(int(d), dim)

    eigvals, eigvecs = scipy.linalg.eigh(s_b, s_w + gamma * np.eye(dim))
    order = np.argsort(-eigvals, kind="stable")[:d]
    if np.max(np.abs(eigvals)) <= 1e-12:
        logger.warning("Between-subclass scatter is zero; using an axis-aligned projection", dim=dim, d=d)
        return np.eye(dim)[:, :d]

    W = eigvecs[:, order]
    W = W / np.linalg.norm(W, axis=0)
    pivots = np.argmax(np.abs(W), axis=0)
    signs = np.sign(W[pivots, np.arange(d)])
    signs[signs == 0] = 1.0
    W = W * signs
    assert np.all(np.isfinite(W)), "Non-finite projection"
    return W


@dataclass
class GnbModel:
    priors: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        assert abs(self.priors.sum() - 1.0) <= 1e-12, "Priors do not sum to one"
        assert np.all(self.variances > 0), "Non-positive variance"

    def joint_log_likelihood(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        jll = []
        for c in range(len(self.priors)):
            log_det = np.sum(np.log(2 * np.pi * self.variances[c]))
            quad = np.sum((X - self.means[c])**2 / self.variances[c], axis=1)
            jll.append(np.log(self.priors[c]) - 0.5 * (log_det + quad))
        return np.stack(jll, axis=1)

    def posterior(self, X):
        jll = self.joint_log_likelihood(X)
        return np.exp(jll - logsumexp(jll, axis=1)[:, None])

    def predict(self, X):
        jll = self.joint_log_likelihood(X)
        # Strict comparison: ties resolve to known (0)
        return (jll[:, 1] > jll[:, 0]).astype(np.int64)

    def save_state(self, f):
        f.write_array(self.priors)
        f.write_array(self.means)
        f.write_array(self.variances)

    @classmethod
    def load_state(cls, f, state_version):
        return cls(f.read_array(), f.read_array(), f.read_array())


def fit_gnb(X, labels, var_smoothing=VAR_SMOOTHING):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if set(np.unique(labels)) != {0, 1}:
        raise ValueError("Gaussian naive Bayes needs samples of both labels 0 and 1")
    epsilon = var_smoothing * float(np.max(X.var(axis=0)))
    if epsilon == 0:
        epsilon = var_smoothing
    priors = np.array([np.mean(labels == 0), np.mean(labels == 1)])
    means = np.stack([X[labels == c].mean(axis=0) for c in (0, 1)])
    variances = np.stack([X[labels == c].var(axis=0) + epsilon for c in (0, 1)])
    return GnbModel(priors, means, variances)


@dataclass
class IsdaModel:
    h1: int
    h2: int
    projection: np.ndarray
    gnb: GnbModel
    feature_source: str = "embedding"
    gmms: list = field(default_factory=list)
    subclass_owner: np.ndarray = field(default_factory=lambda: np.zeros(0))
    """Class id owning each subclass column; 0 marks the unknown pool."""
    ridge: float = 0.0

    def __post_init__(self):
        assert self.projection.ndim == 2 and 1 <= self.projection.shape[1] <= self.projection.shape[0]
        assert np.all(np.isfinite(self.projection)), "Non-finite projection"
        assert self.feature_source in FEATURE_SOURCES, f"Unknown feature source {self.feature_source}"

    @property
    def num_subclasses(self):
        return len(self.subclass_owner)

    def save_state(self, f):
        f.write_16bit(self.h1)
        f.write_16bit(self.h2)
        f.write_string(self.feature_source)
        f.write_float64(self.ridge)
        f.write_array(self.projection)
        self.gnb.save_state(f)
        f.write_array(self.subclass_owner)
        f.write_16bit(len(self.gmms))
        for gmm in self.gmms:
            gmm.save_state(f)

    @classmethod
    def load_state(cls, f, state_version):
        h1 = f.read_16bit()
        h2 = f.read_16bit()
        feature_source = f.read_string()
        ridge = f.read_float64()
        projection = f.read_array()
        gnb = GnbModel.load_state(f, state_version)
        owner = f.read_array()
        gmms = [GmmModel.load_state(f, state_version) for _ in range(f.read_16bit())]
        return cls(h1, h2, projection, gnb, feature_source, gmms, owner, ridge)


def _component_count(requested, available, pool):
    if available < requested:
        logger.warning(
            "Reducing mixture components to the number of samples",
            pool=pool,
            requested=requested,
            available=available,
        )
        return available
    return requested


def fit_isda(features, labels, class_ids, h1, h2, gamma, seed, feature_source="embedding"):
    """
    Fits the stage-one detector on the merged pool.

    Args:
        features: (N, D) feature rows.
        labels: binary labels, 0 for known and 1 for unknown.
        class_ids: original class id of every known row (ignored for unknown rows).
        h1 (int): mixture components for the unknown pool.
        h2 (int): mixture components per known class.
        gamma (float): ridge factor relative to `trace(S_w) / D`.
        seed (int): seeds every mixture fit.
    """
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    class_ids = np.asarray(class_ids, dtype=np.int64)
    if set(np.unique(labels)) != {0, 1}:
        raise ValueError("The merged pool needs both known (0) and unknown (1) samples")
    if h1 < 1 or h2 < 1:
        raise ValueError(f"Subclass counts must be positive, got h1={h1}, h2={h2}")

    pools = []
    for class_id in np.unique(class_ids[labels == 0]):
        rows = np.flatnonzero((labels == 0) & (class_ids == class_id))
        pools.append((int(class_id), rows, _component_count(h2, len(rows), f"class {class_id}")))
    unknown_rows = np.flatnonzero(labels == 1)
    pools.append((0, unknown_rows, _component_count(h1, len(unknown_rows), "unknown")))

    total = sum(count for _, _, count in pools)
    R = np.zeros((len(X), total))
    gmms = []
    owner = []
    column = 0
    for class_id, rows, count in pools:
        gmm = fit_gmm(X[rows], count, derive_seed(seed, "subclass", class_id))
        R[rows, column:column + count] = np.atleast_2d(responsibilities(gmm, X[rows]))
        gmms.append(gmm)
        owner.extend([class_id] * count)
        column += count

    s_w, s_b = scatter_matrices(X, R)
    dim = X.shape[1]
    d = min(dim, total - 1)
    trace = float(np.trace(s_w))
    ridge = gamma * trace / dim if trace > 0 else gamma
    W = fit_projection(s_w, s_b, ridge, d)
    gnb = fit_gnb(X @ W, labels)
    logger.debug("ISDA fitted with %d subclasses, projection %dx%d", total, dim, W.shape[1])
    return IsdaModel(
        int(h1), int(h2), W, gnb, feature_source, gmms, np.asarray(owner, dtype=np.float64), float(ridge)
    )


def predict_isda(model, x):
    """
    Returns `(label, posterior_unknown)` for one sample, or arrays of both for a batch.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.projection.shape[0]:
        raise ValueError(f"Expected features of length {model.projection.shape[0]}, got shape {X.shape}")
    Z = X @ model.projection
    labels = model.gnb.predict(Z)
    posterior = model.gnb.posterior(Z)[:, 1]
    if single:
        return int(labels[0]), float(posterior[0])
    return labels, posterior
