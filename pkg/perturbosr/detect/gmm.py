#
# License: See LICENSE.md file
#
"""
Diagonal-covariance Gaussian mixtures fitted by expectation-maximisation. They provide the soft subclass assignment
of the discriminant stage.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

import perturbosr

logger = perturbosr.logging.get_logger(__name__)

VARIANCE_FLOOR = 1e-6
EM_TOLERANCE = 1e-6
EM_MAX_ITERATIONS = 100
EMPTY_COMPONENT = 1e-12


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihoods: tuple = ()
    """Mean log-likelihood per sample, one entry per E-step."""

    def __post_init__(self):
        assert abs(self.weights.sum() - 1.0) <= 1e-9, "Mixture weights do not sum to one"
        assert np.all(self.variances >= VARIANCE_FLOOR), "Variance below floor"

    @property
    def num_components(self):
        return len(self.weights)

    def save_state(self, f):
        f.write_array(self.weights)
        f.write_array(self.means)
        f.write_array(self.variances)
        f.write_array(np.asarray(self.log_likelihoods, dtype=np.float64))

    @classmethod
    def load_state(cls, f, state_version):
        weights = f.read_array()
        means = f.read_array()
        variances = f.read_array()
        log_likelihoods = tuple(float(x) for x in f.read_array())
        return cls(weights, means, variances, log_likelihoods)


def _log_joint(X, weights, means, variances):
    # log w_h + log N(x | m_h, diag(v_h)) for every (sample, component)
    diff = X[:, None, :] - means[None, :, :]
    log_det = np.sum(np.log(2 * np.pi * variances), axis=1)
    mahalanobis = np.sum(diff * diff / variances[None, :, :], axis=2)
    with np.errstate(divide="ignore"):
        log_weights = np.log(weights)
    return log_weights[None, :] - 0.5 * (log_det[None, :] + mahalanobis)


def _seed_means(X, H, rng):
    # Farthest-point seeding: a random first point, then repeatedly the point farthest from all chosen ones
    chosen = [int(rng.integers(len(X)))]
    distance = np.sum((X - X[chosen[0]])**2, axis=1)
    for _ in range(1, H):
        nxt = int(np.argmax(distance))
        chosen.append(nxt)
        distance = np.minimum(distance, np.sum((X - X[nxt])**2, axis=1))
    return X[chosen].copy()


def fit_gmm(X, H, seed):
    """
    EM with diagonal covariances. Stops after 100 iterations or once the mean log-likelihood gains less than 1e-6.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    H = int(H)
    if H < 1:
        raise ValueError(f"Number of components must be positive, got {H}")
    if len(X) < H:
        raise ValueError(f"Cannot fit {H} components to {len(X)} samples")

    rng = np.random.default_rng(seed)
    n, dim = X.shape
    weights = np.full(H, 1.0 / H)
    means = _seed_means(X, H, rng)
    variances = np.tile(np.maximum(X.var(axis=0), VARIANCE_FLOOR), (H, 1))

    history = []
    for iteration in range(EM_MAX_ITERATIONS):
        log_joint = _log_joint(X, weights, means, variances)
        log_norm = logsumexp(log_joint, axis=1)
        history.append(float(log_norm.mean()))
        if len(history) > 1 and history[-1] - history[-2] < EM_TOLERANCE:
            break
        resp = np.exp(log_joint - log_norm[:, None])

        mass = resp.sum(axis=0)
        live = mass > EMPTY_COMPONENT
        safe_mass = np.where(live, mass, 1.0)
        new_means = (resp.T @ X) / safe_mass[:, None]
        centred = X[:, None, :] - new_means[None, :, :]
        new_vars = np.einsum("nh,nhd->hd", resp, centred * centred) / safe_mass[:, None]
        # Components that lost all mass keep their previous parameters
        means = np.where(live[:, None], new_means, means)
        variances = np.maximum(np.where(live[:, None], new_vars, variances), VARIANCE_FLOOR)
        weights = mass / mass.sum()

    logger.debug("GMM with %d components converged after %d iterations", H, len(history))
    return GmmModel(weights, means, variances, tuple(history))


def responsibilities(gmm, x):
    """
    Posterior component memberships of one sample or a batch; every row sums to one.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != gmm.means.shape[1]:
        raise ValueError(f"Expected samples of length {gmm.means.shape[1]}, got shape {X.shape}")
    log_joint = _log_joint(X, gmm.weights, gmm.means, gmm.variances)
    resp = np.exp(log_joint - logsumexp(log_joint, axis=1)[:, None])
    return resp[0] if single else resp


def log_likelihood(gmm, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return float(logsumexp(_log_joint(X, gmm.weights, gmm.means, gmm.variances), axis=1).mean())
