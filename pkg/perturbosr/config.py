#
# License: See LICENSE.md file
#
"""
Experiment configuration. A TOML document overrides the module-level `defaults` table by table; every field is
checked and errors name the dotted path of the offending field.

```toml
format_version = 1
seed = 7
output_dir = "runs/demo"

[data]
source = "synth"

[data.synth]
overlap = 0.8

[pipeline.perturb]
num_models = 7
noise_scale = 0.3
```
"""

import copy
import hashlib
import itertools
import json
import math
import os
from dataclasses import dataclass, field, replace

try:
    import tomllib
except ImportError:
    import tomli as tomllib

import perturbosr
from perturbosr.core.network import TrainConfig
from perturbosr.core.perturbation import PerturbConfig
from perturbosr.detect.isda import FEATURE_SOURCES
from perturbosr.detect.pipeline import STAGE2_FEATURES, PipelineConfig
from perturbosr.detect.tree import DtConfig
from perturbosr.utils import derive_seed

logger = perturbosr.logging.get_logger(__name__)

FORMAT_VERSION = 1
MAX_SEED = 2**63 - 1

defaults = {
    "format_version": FORMAT_VERSION,
    "seed": 0,
    "output_dir": "perturbosr-out",
    "data": {
        "source": "synth",
        "csv_path": "",
        "label_column": "label",
        "unknown_fraction": 0.5,
        "synth": {
            "num_known": 3,
            "num_unknown": 3,
            "per_class": 200,
            "dim": 8,
            "overlap": 0.0,
            "sigma": 1.0,
        },
    },
    "network": {
        "hidden_dims": [128, 64],
    },
    "train": {
        "epochs": 200,
        "batch_size": 256,
        "learning_rate": 1e-4,
    },
    "pipeline": {
        "mu_star": 4.5,
        "h1": 2,
        "h2": 1,
        "gamma": 1e-4,
        "feature_source": "embedding",
        "stage2_features": "probability_space",
        "perturb": {
            "num_models": 7,
            "noise_scale": 0.3,
        },
        "tree": {
            "max_depth": 8,
            "min_samples_leaf": 5,
        },
    },
    "grid": {
        "num_models": [3, 5, 7],
        "noise_scale": [0.1, 0.3, 0.5],
        "mu_star": [4.1, 4.3, 4.5, 4.7, 4.9],
        "h2": [1, 2],
    },
}


class ConfigError(ValueError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class DataSettings:
    source: str = "synth"
    csv_path: str = ""
    label_column: str = "label"
    unknown_fraction: float = 0.5
    num_known: int = 3
    num_unknown: int = 3
    per_class: int = 200
    dim: int = 8
    overlap: float = 0.0
    sigma: float = 1.0


@dataclass(frozen=True)
class GridSpec:
    """
    Candidate values of the swept parameters. Cells are enumerated in lexicographic order of their indices.

    ```python
    >>> grid = GridSpec((7,), (0.1, 0.3), (4.5,), (1, 2))
    >>> len(grid), grid.cells()[1]
    (4, {'num_models': 7, 'noise_scale': 0.1, 'mu_star': 4.5, 'h2': 2})

    ```
    """
    num_models: tuple
    noise_scale: tuple
    mu_star: tuple
    h2: tuple

    PARAMETERS = ("num_models", "noise_scale", "mu_star", "h2")

    def __post_init__(self):
        for name in self.PARAMETERS:
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"grid.{name}", "expected a non-empty list")

    def __len__(self):
        return math.prod(len(getattr(self, name)) for name in self.PARAMETERS)

    def cells(self):
        values = [getattr(self, name) for name in self.PARAMETERS]
        return [dict(zip(self.PARAMETERS, combo)) for combo in itertools.product(*values)]


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    output_dir: str
    data: DataSettings
    hidden_dims: tuple
    train: TrainConfig
    pipeline: PipelineConfig
    grid: GridSpec
    document: dict = field(compare=False, repr=False)
    """The resolved document, defaults included."""
    def with_cell(self, num_models=None, noise_scale=None, mu_star=None, h2=None):
        """The same experiment with some swept parameters replaced."""
        perturb = self.pipeline.perturb
        perturb = replace(
            perturb,
            num_models=perturb.num_models if num_models is None else num_models,
            noise_scale=perturb.noise_scale if noise_scale is None else noise_scale,
        )
        pipeline = replace(
            self.pipeline,
            perturb=perturb,
            mu_star=self.pipeline.mu_star if mu_star is None else mu_star,
            h2=self.pipeline.h2 if h2 is None else h2,
        )
        return replace(self, pipeline=pipeline)


def _type_name(value):
    return type(value).__name__


def _merge(default, document, path):
    # Returns `default` overridden by `document`, rejecting unknown keys and wrong types
    merged = copy.deepcopy(default)
    for key, value in document.items():
        key_path = f"{path}.{key}" if path else key
        if key not in default:
            raise ConfigError(key_path, "unknown key")
        expected = default[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise ConfigError(key_path, f"expected a table, got {value!r}")
            merged[key] = _merge(expected, value, key_path)
        elif isinstance(expected, list):
            if not isinstance(value, list):
                raise ConfigError(key_path, f"expected a list, got {value!r}")
            element = expected[0]
            merged[key] = [_check_scalar(element, v, f"{key_path}[{i}]") for i, v in enumerate(value)]
        else:
            merged[key] = _check_scalar(expected, value, key_path)
    return merged


def _check_scalar(expected, value, path):
    if isinstance(expected, bool) or isinstance(value, bool):
        raise ConfigError(path, f"expected {_type_name(expected)}, got {value!r}")
    if isinstance(expected, float):
        if not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(expected, int):
        if not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(expected, str) and not isinstance(value, str):
        raise ConfigError(path, f"expected a string, got {value!r}")
    return value


def _require(condition, path, expected, value):
    if not condition:
        raise ConfigError(path, f"expected {expected}, got {value!r}")


def _validate(doc):
    _require(doc["format_version"] == FORMAT_VERSION, "format_version", f"{FORMAT_VERSION}", doc["format_version"])
    _require(0 <= doc["seed"] <= MAX_SEED, "seed", "a non-negative 63-bit integer", doc["seed"])
    _require(doc["output_dir"] != "", "output_dir", "a directory path", doc["output_dir"])

    data = doc["data"]
    _require(data["source"] in ("synth", "csv"), "data.source", "'synth' or 'csv'", data["source"])
    if data["source"] == "csv":
        _require(data["csv_path"] != "", "data.csv_path", "a file path for source 'csv'", data["csv_path"])
    _require(0 <= data["unknown_fraction"] <= 1, "data.unknown_fraction", "a value in [0, 1]", data["unknown_fraction"])
    synth = data["synth"]
    _require(synth["num_known"] >= 2, "data.synth.num_known", "at least 2", synth["num_known"])
    _require(synth["num_unknown"] >= 0, "data.synth.num_unknown", "a non-negative integer", synth["num_unknown"])
    _require(synth["per_class"] >= 1, "data.synth.per_class", "a positive integer", synth["per_class"])
    _require(synth["dim"] >= 1, "data.synth.dim", "a positive integer", synth["dim"])
    _require(0 <= synth["overlap"] <= 1, "data.synth.overlap", "a value in [0, 1]", synth["overlap"])
    _require(synth["sigma"] > 0, "data.synth.sigma", "a positive number", synth["sigma"])

    hidden = doc["network"]["hidden_dims"]
    _require(len(hidden) > 0, "network.hidden_dims", "a non-empty list", hidden)
    for i, h in enumerate(hidden):
        _require(h >= 1, f"network.hidden_dims[{i}]", "a positive integer", h)

    train = doc["train"]
    _require(train["epochs"] >= 1, "train.epochs", "a positive integer", train["epochs"])
    _require(train["batch_size"] >= 1, "train.batch_size", "a positive integer", train["batch_size"])
    _require(train["learning_rate"] >= 0, "train.learning_rate", "a non-negative number", train["learning_rate"])

    pipe = doc["pipeline"]
    _check_swept(pipe["mu_star"], "mu_star", "pipeline.mu_star")
    _check_swept(pipe["h2"], "h2", "pipeline.h2")
    _check_swept(pipe["perturb"]["num_models"], "num_models", "pipeline.perturb.num_models")
    _check_swept(pipe["perturb"]["noise_scale"], "noise_scale", "pipeline.perturb.noise_scale")
    _require(pipe["h1"] >= 1, "pipeline.h1", "a positive integer", pipe["h1"])
    _require(pipe["gamma"] > 0, "pipeline.gamma", "a positive number", pipe["gamma"])
    _require(
        pipe["feature_source"] in FEATURE_SOURCES, "pipeline.feature_source", f"one of {FEATURE_SOURCES}",
        pipe["feature_source"]
    )
    _require(
        pipe["stage2_features"] in STAGE2_FEATURES, "pipeline.stage2_features", f"one of {STAGE2_FEATURES}",
        pipe["stage2_features"]
    )
    tree = pipe["tree"]
    _require(tree["max_depth"] >= 1, "pipeline.tree.max_depth", "a positive integer", tree["max_depth"])
    _require(
        tree["min_samples_leaf"] >= 1, "pipeline.tree.min_samples_leaf", "a positive integer", tree["min_samples_leaf"]
    )

    for name in GridSpec.PARAMETERS:
        values = doc["grid"][name]
        _require(len(values) > 0, f"grid.{name}", "a non-empty list", values)
        for i, v in enumerate(values):
            _check_swept(v, name, f"grid.{name}[{i}]")


def _check_swept(value, name, path):
    if name == "num_models":
        _require(value >= 1, path, "a positive integer", value)
    elif name == "noise_scale":
        _require(math.isfinite(value) and value >= 0, path, "a non-negative number", value)
    elif name == "mu_star":
        _require(math.isfinite(value), path, "a finite number", value)
    elif name == "h2":
        _require(value >= 1, path, "a positive integer", value)


def config_from_dict(document, seed=None, output_dir=None):
    """
    Resolves a config document (already parsed) against `defaults`. `seed` and `output_dir` override the document.
    """
    doc = _merge(defaults, document, "")
    if seed is not None:
        doc["seed"] = _check_scalar(0, seed, "seed")
    if output_dir is not None:
        doc["output_dir"] = _check_scalar("", output_dir, "output_dir")
    _validate(doc)

    seed = doc["seed"]
    data, synth = doc["data"], doc["data"]["synth"]
    pipe = doc["pipeline"]
    return ExperimentConfig(
        seed=seed,
        output_dir=doc["output_dir"],
        data=DataSettings(
            data["source"],
            data["csv_path"],
            data["label_column"],
            data["unknown_fraction"],
            synth["num_known"],
            synth["num_unknown"],
            synth["per_class"],
            synth["dim"],
            synth["overlap"],
            synth["sigma"],
        ),
        hidden_dims=tuple(doc["network"]["hidden_dims"]),
        train=TrainConfig(
            doc["train"]["epochs"],
            doc["train"]["batch_size"],
            doc["train"]["learning_rate"],
            derive_seed(seed, "train"),
        ),
        pipeline=PipelineConfig(
            perturb=PerturbConfig(
                pipe["perturb"]["num_models"], pipe["perturb"]["noise_scale"], derive_seed(seed, "perturb")
            ),
            mu_star=pipe["mu_star"],
            h1=pipe["h1"],
            h2=pipe["h2"],
            gamma=pipe["gamma"],
            dt=DtConfig(pipe["tree"]["max_depth"], pipe["tree"]["min_samples_leaf"]),
            feature_source=pipe["feature_source"],
            stage2_features=pipe["stage2_features"],
            seed=derive_seed(seed, "pipeline"),
        ),
        grid=GridSpec(*(tuple(doc["grid"][name]) for name in GridSpec.PARAMETERS)),
        document=doc,
    )


def load_config(path=None, seed=None, output_dir=None):
    """
    Reads a TOML config. Without a path, the defaults are used as they are.
    """
    document = {}
    if path is not None:
        if not os.path.isfile(path):
            logger.error("Config file '%s' couldn't be found, or isn't a file!", path)
            raise FileNotFoundError(path)
        with open(path, "rb") as f:
            try:
                document = tomllib.load(f)
            except tomllib.TOMLDecodeError as e:
                raise ConfigError("<document>", f"invalid TOML: {e}")
    config = config_from_dict(document, seed=seed, output_dir=output_dir)
    logger.debug("Config resolved", path=path, hash=config_hash(config)[:12])
    return config


def config_hash(config):
    canonical = json.dumps(config.document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf8")).hexdigest()
