#
# License: See LICENSE.md file
#
"""
Datasets and the open-set protocol.

Half of the classes (by default) are hidden as unknown. Known classes are split 3:1:1 into train/validation/test per
class, unknown classes 1:4 into validation/test. Features are standardised with statistics of the training split only.
Every split can be written to a JSON manifest and rebuilt from it exactly.
"""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

import perturbosr
from perturbosr.utils import derive_seed, read_text_header, write_text_artifact

logger = perturbosr.logging.get_logger(__name__)

MANIFEST_FORMAT = "perturbosr-split"
MANIFEST_VERSION = 1
SPLITS = ("train", "val_known", "test_known", "val_unknown", "test_unknown")


class ParseError(ValueError):
    def __init__(self, path, line, column, message):
        self.path = path
        self.line = line
        self.column = column
        super().__init__(f"{path}:{line}: column '{column}': {message}")


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    """Class ids, dense in 1..C."""
    class_names: tuple
    """Name of class `i` at position `i - 1`."""
    feature_names: tuple = ()
    centers: np.ndarray = None
    """Class centers, for synthetic datasets."""

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_names = tuple(self.class_names)
        if not self.feature_names:
            self.feature_names = tuple(f"x{i}" for i in range(self.features.shape[1]))
        self.feature_names = tuple(self.feature_names)
        assert len(self.features) == len(self.labels), "Features and labels differ in length"
        assert len(self.feature_names) == self.features.shape[1], "Feature names do not match the feature width"
        if len(self.labels):
            assert 1 <= self.labels.min() and self.labels.max() <= len(self.class_names), "Labels out of range"

    def __len__(self):
        return len(self.labels)

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def feature_dim(self):
        return self.features.shape[1]


@dataclass
class OpenSplit:
    train: LabeledDataset
    val_known: LabeledDataset
    test_known: LabeledDataset
    val_unknown: np.ndarray
    test_unknown: np.ndarray
    known_class_ids: tuple
    """Original class ids of the known classes; known class `i` of the split is `known_class_ids[i - 1]`."""
    unknown_class_ids: tuple
    seed: int = 0
    unknown_fraction: float = 0.5
    mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    scale: np.ndarray = field(default_factory=lambda: np.ones(0))
    rows: dict = field(default_factory=dict)
    """Row indices of every split into the source dataset."""
    def __post_init__(self):
        assert not set(self.known_class_ids) & set(self.unknown_class_ids), "Known and unknown classes overlap"

    @property
    def num_known(self):
        return len(self.known_class_ids)

    @property
    def unknown_label(self):
        return self.num_known + 1

    def open_set(self, which="test"):
        """
        Known and unknown samples of the validation or test split, with ground truth (unknown as K+1).
        """
        if which not in ("val", "test"):
            raise ValueError(f"Open set must be 'val' or 'test', got {which}")
        known = self.val_known if which == "val" else self.test_known
        unknown = self.val_unknown if which == "val" else self.test_unknown
        X = np.concatenate([known.features, unknown.reshape(-1, known.feature_dim)])
        truth = np.concatenate([known.labels, np.full(len(unknown), self.unknown_label, dtype=np.int64)])
        return X, truth


def _label_sort_key(name):
    try:
        return (0, float(name), name)
    except ValueError:
        return (1, 0.0, name)


def load_csv(path, label_column="label"):
    """
    Reads a CSV with a header row, numeric feature columns and one label column. Leading `#` lines are skipped.
    Labels are mapped to dense class ids in sorted label order (numeric labels sort numerically).
    """
    if not os.path.isfile(path):
        logger.error("Dataset '%s' couldn't be found, or isn't a file!", path)
        raise FileNotFoundError(path)
    _, _, skip = read_text_header(path)
    try:
        frame = pd.read_csv(path, skiprows=skip, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise ValueError(f"{path}: no header row")
    if label_column not in frame.columns:
        raise KeyError(f"{path}: label column '{label_column}' not found")
    if len(frame) == 0:
        raise ValueError(f"{path}: dataset is empty")

    feature_names = [c for c in frame.columns if c != label_column]
    if not feature_names:
        raise ValueError(f"{path}: no feature columns")
    columns = []
    for name in feature_names:
        values = pd.to_numeric(frame[name].str.strip(), errors="coerce").to_numpy(dtype=np.float64)
        bad = np.flatnonzero(~np.isfinite(values))
        if len(bad):
            row = int(bad[0])
            raise ParseError(path, skip + row + 2, name, f"non-numeric value '{frame[name].iloc[row]}'")
        columns.append(values)

    raw_labels = frame[label_column].str.strip()
    missing = np.flatnonzero((raw_labels == "").to_numpy())
    if len(missing):
        raise ParseError(path, skip + int(missing[0]) + 2, label_column, "missing label")
    class_names = tuple(sorted(raw_labels.unique(), key=_label_sort_key))
    index = {name: i + 1 for i, name in enumerate(class_names)}
    labels = raw_labels.map(index).to_numpy(dtype=np.int64)

    logger.info("Loaded %s", path, rows=len(frame), features=len(feature_names), classes=len(class_names))
    return LabeledDataset(np.column_stack(columns), labels, class_names, tuple(feature_names))


def save_csv(ds, path):
    frame = pd.DataFrame(ds.features, columns=list(ds.feature_names))
    frame["label"] = [ds.class_names[label - 1] for label in ds.labels]
    write_text_artifact(path, "dataset", frame, classes=ds.num_classes)


def _split_rows(rows, rng, n_val, n_test):
    perm = rng.permutation(rows)
    return np.sort(perm[:n_val]), np.sort(perm[n_val:n_val + n_test]), np.sort(perm[n_val + n_test:])


def make_open_split(ds, unknown_fraction=0.5, seed=0, unknown_class_ids=None):
    """
    Draws `round(unknown_fraction * C)` unknown classes (unless given) and splits every class.

    ```python
    >>> ds = LabeledDataset(np.arange(20.0).reshape(10, 2), [1] * 5 + [2] * 5, ("a", "b"))
    >>> split = make_open_split(ds, seed=3, unknown_class_ids=[2])
    >>> len(split.train), len(split.val_known), len(split.test_known), len(split.val_unknown), len(split.test_unknown)
    (3, 1, 1, 1, 4)

    ```
    """
    C = ds.num_classes
    if C < 2:
        raise ValueError(f"An open split needs at least 2 classes, got {C}")
    if not 0 <= unknown_fraction <= 1:
        raise ValueError(f"unknown_fraction must be in [0, 1], got {unknown_fraction}")
    rng = np.random.default_rng(derive_seed(seed, "split"))

    if unknown_class_ids is None:
        n_unknown = min(max(int(math.floor(unknown_fraction * C + 0.5)), 0), C - 1)
        unknown = sorted(int(c) for c in rng.choice(np.arange(1, C + 1), n_unknown, replace=False))
    else:
        unknown = sorted(int(c) for c in unknown_class_ids)
        if any(not 1 <= c <= C for c in unknown) or len(set(unknown)) != len(unknown):
            raise ValueError(f"Invalid unknown class ids {unknown} for {C} classes")
        if len(unknown) >= C:
            raise ValueError("At least one class must stay known")
    known = [c for c in range(1, C + 1) if c not in unknown]

    rows = {name: [] for name in SPLITS}
    for c in known:
        class_rows = np.flatnonzero(ds.labels == c)
        n = len(class_rows)
        if n < 5:
            logger.warning("Known class has fewer than 5 samples; all go to training", class_id=c, samples=n)
        val, test, train = _split_rows(class_rows, rng, n // 5, n // 5)
        rows["train"].append(train)
        rows["val_known"].append(val)
        rows["test_known"].append(test)
    for c in unknown:
        class_rows = np.flatnonzero(ds.labels == c)
        val, test, _ = _split_rows(class_rows, rng, len(class_rows) // 5, len(class_rows))
        rows["val_unknown"].append(val)
        rows["test_unknown"].append(test)

    empty = np.zeros(0, dtype=np.int64)
    rows = {name: np.sort(np.concatenate(parts)) if parts else empty for name, parts in rows.items()}
    return _build_split(ds, known, unknown, rows, seed, unknown_fraction)


def _build_split(ds, known, unknown, rows, seed, unknown_fraction):
    train_X = ds.features[rows["train"]]
    if len(train_X) == 0:
        raise ValueError("The training split is empty")
    mean = train_X.mean(axis=0)
    std = train_X.std(axis=0)
    # Zero-variance dimensions are only centred
    scale = np.where(std > 0, std, 1.0)

    remap = np.zeros(ds.num_classes + 1, dtype=np.int64)
    for i, c in enumerate(known):
        remap[c] = i + 1
    known_names = tuple(ds.class_names[c - 1] for c in known)

    def known_part(name):
        r = rows[name]
        return LabeledDataset((ds.features[r] - mean) / scale, remap[ds.labels[r]], known_names, ds.feature_names)

    def unknown_part(name):
        return ((ds.features[rows[name]] - mean) / scale).reshape(-1, ds.feature_dim)

    split = OpenSplit(
        known_part("train"),
        known_part("val_known"),
        known_part("test_known"),
        unknown_part("val_unknown"),
        unknown_part("test_unknown"),
        tuple(known),
        tuple(unknown),
        seed,
        unknown_fraction,
        mean,
        scale,
        {name: np.asarray(r, dtype=np.int64) for name, r in rows.items()},
    )
    logger.info(
        "Open split built",
        known=len(known),
        unknown=len(unknown),
        **{name: len(r) for name, r in split.rows.items()},
    )
    return split


def write_manifest(split, path):
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "seed": split.seed,
        "unknown_fraction": split.unknown_fraction,
        "known_class_ids": list(split.known_class_ids),
        "unknown_class_ids": list(split.unknown_class_ids),
        "rows": {name: [int(i) for i in split.rows[name]] for name in SPLITS},
        "mean": [float(x) for x in split.mean],
        "scale": [float(x) for x in split.scale],
    }
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")


def read_manifest(path):
    if not os.path.isfile(path):
        logger.error("Split manifest '%s' couldn't be found, or isn't a file!", path)
        raise FileNotFoundError(path)
    with open(path, "r") as f:
        manifest = json.load(f)
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"{path}: not a split manifest")
    if manifest.get("version", 0) > MANIFEST_VERSION:
        raise ValueError(f"{path}: manifest version {manifest['version']} is not supported")
    for key in ("known_class_ids", "unknown_class_ids", "rows"):
        if key not in manifest:
            raise KeyError(f"{path}: manifest lacks '{key}'")
    return manifest


def apply_manifest(ds, manifest):
    """
    Rebuilds the split a manifest describes from its source dataset.
    """
    rows = {name: np.asarray(manifest["rows"].get(name, []), dtype=np.int64) for name in SPLITS}
    for name, r in rows.items():
        if len(r) and (r.min() < 0 or r.max() >= len(ds)):
            raise ValueError(f"Manifest rows of '{name}' fall outside the dataset")
    split = _build_split(
        ds,
        [int(c) for c in manifest["known_class_ids"]],
        [int(c) for c in manifest["unknown_class_ids"]],
        rows,
        manifest.get("seed", 0),
        manifest.get("unknown_fraction", 0.5),
    )
    if "mean" in manifest and not np.allclose(split.mean, manifest["mean"], rtol=0, atol=1e-9):
        raise ValueError("Manifest standardisation does not match the dataset")
    return split


def _place_centers(count, dim, min_distance, rng):
    # Rejection sampling in a ball whose radius grows while candidates keep colliding
    radius = min_distance * max(count, 1)
    centers = []
    failures = 0
    while len(centers) < count:
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        candidate = direction * radius * rng.uniform(0.0, 1.0)**(1.0 / dim)
        if all(np.linalg.norm(candidate - c) >= min_distance for c in centers):
            centers.append(candidate)
            continue
        failures += 1
        if failures % 100 == 0:
            radius *= 1.1
    return np.array(centers).reshape(count, dim)


def synth_blobs(num_known, num_unknown, per_class, dim, overlap=0.0, seed=0, sigma=1.0):
    """
    Isotropic Gaussian blobs. All class centers start at least `8 * sigma` apart; every unknown center is then moved
    towards its nearest known center by the fraction `overlap` (1 makes them coincide).

    Returns the dataset and the ids of the unknown classes (`num_known + 1` onwards).
    """
    for name, value in (("num_known", num_known), ("per_class", per_class), ("dim", dim)):
        if value < 1:
            raise ValueError(f"{name} must be positive, got {value}")
    if num_unknown < 0:
        raise ValueError(f"num_unknown must be non-negative, got {num_unknown}")
    if not 0 <= overlap <= 1:
        raise ValueError(f"overlap must be in [0, 1], got {overlap}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")

    rng = np.random.default_rng(derive_seed(seed, "synth"))
    total = num_known + num_unknown
    centers = _place_centers(total, dim, 8.0 * sigma, rng)
    known_centers = centers[:num_known]
    for u in range(num_known, total):
        nearest = known_centers[np.argmin(np.linalg.norm(known_centers - centers[u], axis=1))]
        centers[u] = centers[u] + overlap * (nearest - centers[u])

    features = np.concatenate([c + sigma * rng.standard_normal((per_class, dim)) for c in centers])
    labels = np.repeat(np.arange(1, total + 1), per_class)
    width = len(str(total))
    class_names = tuple(f"class_{i:0{width}d}" for i in range(1, total + 1))
    ds = LabeledDataset(features, labels, class_names, centers=centers)
    logger.debug("Synthesised %d blobs in %d dimensions", total, dim, overlap=overlap)
    return ds, tuple(range(num_known + 1, total + 1))
