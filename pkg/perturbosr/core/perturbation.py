#
# License: See LICENSE.md file
#
"""
Parameter-space perturbation of a trained classifier. Every layer receives Gaussian noise whose standard deviation is
the layer's own parameter spread times a scale factor, and B such noisy copies form the ensemble.
"""

from dataclasses import dataclass

import numpy as np

import perturbosr
from perturbosr.utils import derive_seed

from .network import NetworkParams

logger = perturbosr.logging.get_logger(__name__)


@dataclass(frozen=True)
class PerturbConfig:
    num_models: int = 7
    noise_scale: float = 0.3
    master_seed: int = 0

    def __post_init__(self):
        if self.num_models < 1:
            raise ValueError(f"num_models must be at least 1, got {self.num_models}")
        if not self.noise_scale >= 0:
            raise ValueError(f"noise_scale must be non-negative, got {self.noise_scale}")
        if self.master_seed < 0:
            raise ValueError(f"master_seed must be non-negative, got {self.master_seed}")


@dataclass(frozen=True)
class PerturbedEnsemble:
    base: object
    members: tuple
    config: PerturbConfig

    def __len__(self):
        return len(self.members)


def layer_sigma(theta, noise_scale):
    """
    Noise standard deviation of one layer: `noise_scale` times the population standard deviation of its flattened
    parameters.

    ```python
    >>> round(layer_sigma(np.array([1.0, 2.0, 3.0]), 2.0), 6)
    1.632993

    ```
    """
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if theta.size == 0:
        raise ValueError("Cannot compute the spread of an empty layer")
    return float(noise_scale * np.std(theta))


def sample_layer_noise(length, sigma, stream_seed):
    if length < 1:
        raise ValueError(f"length must be positive, got {length}")
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return np.zeros(length)
    rng = np.random.default_rng(stream_seed)
    return sigma * rng.standard_normal(length)


def perturb_params(params, noise_scale, master_seed, member):
    """
    One ensemble member. Weights and biases of a layer share one sigma and one noise stream, keyed by
    (master_seed, member, layer).
    """
    layers = []
    for index, (w, b) in enumerate(params.layers):
        sigma = layer_sigma(params.flat_layer(index), noise_scale)
        if sigma == 0:
            layers.append((w.copy(), b.copy()))
            continue
        noise = sample_layer_noise(w.size + b.size, sigma, derive_seed(master_seed, member, index))
        layers.append(((w.ravel() + noise[:w.size]).reshape(w.shape), b + noise[w.size:]))
    return NetworkParams(layers)


def make_ensemble(model, config):
    checksum = model.params.checksum()
    members = tuple(
        perturb_params(model.params, config.noise_scale, config.master_seed, member)
        for member in range(1, config.num_models + 1)
    )
    assert model.params.checksum() == checksum, "Perturbation mutated the base model"
    logger.debug("Built ensemble of %d members with noise scale %g", config.num_models, config.noise_scale)
    return PerturbedEnsemble(model, members, config)
