#
# License: See LICENSE.md file
#
"""
Stage-two detector: a binary CART tree grown greedily on Gini impurity.
"""

from dataclasses import dataclass, field

import numpy as np

import perturbosr

logger = perturbosr.logging.get_logger(__name__)

CRITERIA = ("Gini", )


@dataclass(frozen=True)
class DtConfig:
    max_depth: int = 8
    min_samples_leaf: int = 5
    criterion: str = "Gini"

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be at least 1, got {self.max_depth}")
        if self.min_samples_leaf < 1:
            raise ValueError(f"min_samples_leaf must be at least 1, got {self.min_samples_leaf}")
        if self.criterion not in CRITERIA:
            raise ValueError(f"Unsupported criterion: {self.criterion}")


@dataclass
class TreeNode:
    feature_index: int = -1
    threshold: float = 0.0
    left: "TreeNode" = None
    right: "TreeNode" = None
    label: int = 0
    class_counts: tuple = (0, 0)
    num_features: int = 0

    @property
    def is_leaf(self):
        return self.left is None and self.right is None

    @property
    def depth(self):
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth, self.right.depth)

    def save_state(self, f):
        f.write(0 if self.is_leaf else 1)
        f.write_64bit(self.num_features)
        f.write_64bit(self.class_counts[0])
        f.write_64bit(self.class_counts[1])
        f.write(self.label)
        if not self.is_leaf:
            f.write_64bit(self.feature_index)
            f.write_float64(self.threshold)
            self.left.save_state(f)
            self.right.save_state(f)

    @classmethod
    def load_state(cls, f, state_version):
        internal = f.read()
        num_features = f.read_64bit()
        counts = (f.read_64bit(), f.read_64bit())
        label = f.read()
        if not internal:
            return cls(label=label, class_counts=counts, num_features=num_features)
        feature_index = f.read_64bit()
        threshold = f.read_float64()
        left = cls.load_state(f, state_version)
        right = cls.load_state(f, state_version)
        return cls(feature_index, threshold, left, right, label, counts, num_features)


def gini(counts):
    """
    ```python
    >>> gini((4, 0))
    0.0
    >>> gini((3, 3))
    0.5

    ```
    """
    total = sum(counts)
    if total == 0:
        return 0.0
    return 1.0 - sum((c / total)**2 for c in counts)


def _majority(counts):
    # Ties resolve to known (0)
    return 1 if counts[1] > counts[0] else 0


def _best_split(X, y, min_leaf):
    """
    Best (decrease, feature, threshold) by weighted Gini decrease. Candidate thresholds are midpoints of sorted
    unique values; ties keep the lower feature index, then the lower threshold.
    """
    n = len(y)
    parent = gini((n - int(y.sum()), int(y.sum())))
    best = None
    for feature in range(X.shape[1]):
        values = X[:, feature]
        order = np.argsort(values, kind="stable")
        sorted_values = values[order]
        ones_left = np.cumsum(y[order])
        for i in range(min_leaf - 1, n - min_leaf):
            if sorted_values[i] == sorted_values[i + 1]:
                continue
            n_left = i + 1
            n_right = n - n_left
            left = (n_left - int(ones_left[i]), int(ones_left[i]))
            ones_right = int(ones_left[-1]) - int(ones_left[i])
            right = (n_right - ones_right, ones_right)
            weighted = (n_left * gini(left) + n_right * gini(right)) / n
            decrease = parent - weighted
            if best is None or decrease > best[0]:
                threshold = (sorted_values[i] + sorted_values[i + 1]) / 2.0
                best = (decrease, feature, float(threshold))
    return best


def _grow(X, y, cfg, depth):
    ones = int(y.sum())
    counts = (len(y) - ones, ones)
    node = TreeNode(label=_majority(counts), class_counts=counts, num_features=X.shape[1])
    if ones == 0 or ones == len(y) or depth >= cfg.max_depth or len(y) < 2 * cfg.min_samples_leaf:
        return node

    split = _best_split(X, y, cfg.min_samples_leaf)
    # Zero-gain splits are allowed on impure nodes; rounding can push their gain slightly below zero
    if split is None or split[0] < -1e-12:
        return node
    _, feature, threshold = split
    mask = X[:, feature] <= threshold
    node.feature_index = feature
    node.threshold = threshold
    node.left = _grow(X[mask], y[mask], cfg, depth + 1)
    node.right = _grow(X[~mask], y[~mask], cfg, depth + 1)
    return node


def fit_tree(X, labels, cfg=DtConfig(), seed=0):
    """
    Fits a CART tree. The result does not depend on sample order; `seed` is accepted for interface symmetry with the
    other detectors and does not influence the fit.

    A split is made only if it strictly decreases the weighted Gini impurity, with one exception: when no split of an
    impure node has positive gain, the best zero-gain split is taken. XOR-like data needs this, since its first split
    gains nothing.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("Cannot fit a tree to empty data")
    if len(X) != len(y):
        raise ValueError(f"{len(X)} samples but {len(y)} labels")
    if not set(np.unique(y)) <= {0, 1}:
        raise ValueError("Tree labels must be binary (0 known, 1 unknown)")
    tree = _grow(X, y, cfg, 0)
    logger.debug("Tree fitted with depth %d on %d samples", tree.depth, len(y))
    return tree


def tree_predict(tree, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != tree.num_features:
        raise ValueError(f"Tree expects {tree.num_features} features, got shape {X.shape}")
    out = np.empty(len(X), dtype=np.int64)
    for row, sample in enumerate(X):
        node = tree
        while not node.is_leaf:
            node = node.left if sample[node.feature_index] <= node.threshold else node.right
        out[row] = node.label
    return int(out[0]) if single else out


def dump_tree(tree, feature_names=None):
    """
    One node per line, indented by depth.

    ```python
    >>> print(dump_tree(TreeNode(label=1, class_counts=(0, 3), num_features=1)))
    leaf label=1 counts=(0, 3)

    ```
    """
    lines = []

    def visit(node, indent):
        pad = "  " * indent
        if node.is_leaf:
            lines.append(f"{pad}leaf label={node.label} counts=({node.class_counts[0]}, {node.class_counts[1]})")
            return
        name = feature_names[node.feature_index] if feature_names else f"x[{node.feature_index}]"
        lines.append(f"{pad}if {name} <= {node.threshold!r}:")
        visit(node.left, indent + 1)
        lines.append(f"{pad}else:")
        visit(node.right, indent + 1)

    visit(tree, 0)
    return "\n".join(lines)
