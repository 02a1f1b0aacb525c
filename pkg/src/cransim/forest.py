"""Random forest of bounded-depth binary Gini trees, grown on bootstrap samples.

Categorical inputs (user id, beam and filter indices) are split as numeric
ordinals. Votes count the trees that predict class 1; their fraction of the
forest is the packet success rate (PSR).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from cransim.errors import ConfigError, ContractError
from cransim.scenario import Vec3

FEATURES = ("user_id", "x", "y", "z", "beam", "filter", "packet_size")
FORMAT_NAME = "cransim-random-forest"
FORMAT_VERSION = 1

# Splits must reduce impurity by more than this to be kept.
_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class FeatureVector:
    user_id: int
    pos: Vec3
    beam_index: int
    filter_index: int
    packet_size: float
    label: int | None = None

    def as_array(self) -> np.ndarray:
        return np.array([self.user_id, self.pos.x, self.pos.y, self.pos.z,
                         self.beam_index, self.filter_index, self.packet_size], dtype=float)


@dataclass(eq=False)
class TrainingSet:
    features: np.ndarray  # (n, 7)
    labels: np.ndarray  # (n,) in {0, 1}

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float).reshape(-1, len(FEATURES))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise ContractError("features and labels differ in length")

    def __len__(self):
        return len(self.labels)

    @classmethod
    def from_vectors(cls, rows) -> "TrainingSet":
        rows = list(rows)
        X = np.array([r.as_array() for r in rows]).reshape(-1, len(FEATURES))
        return cls(X, np.array([r.label for r in rows], dtype=np.int64))

    @property
    def rows(self) -> list[FeatureVector]:
        return [
            FeatureVector(int(f[0]), Vec3(*f[1:4]), int(f[4]), int(f[5]), float(f[6]), int(lbl))
            for f, lbl in zip(self.features, self.labels)
        ]

    def class_counts(self) -> tuple[int, int]:
        ones = int(self.labels.sum())
        return len(self) - ones, ones


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    impurity: float  # weighted Gini of the two children


def gini(n_ones, n) -> float:
    """Gini impurity of a node holding ``n`` rows of which ``n_ones`` are class 1."""
    return 1.0 - ((n_ones / n) ** 2 + ((n - n_ones) / n) ** 2)


def _weighted_children(ones_left, n_left, ones_right, n_right):
    # Sum of child impurities weighted by size, before dividing by the parent size.
    zl = n_left - ones_left
    zr = n_right - ones_right
    return (n_left - (ones_left * ones_left + zl * zl) / n_left) + (
        n_right - (ones_right * ones_right + zr * zr) / n_right
    )


def best_split(X, y, candidate_features) -> Split | None:
    """Lowest weighted-Gini midpoint split over ``candidate_features``.

    Returns None when the node is pure or no candidate split lowers the
    impurity. Ties keep the earliest feature (in candidate order) and the
    lowest threshold.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    n = len(y)
    if n == 0:
        raise ContractError("cannot split an empty node")
    total_ones = int(y.sum())
    if total_ones in (0, n):
        return None
    best = None
    for j in candidate_features:
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        ones_left = np.cumsum(y[order])[:-1].astype(float)
        valid = np.flatnonzero(xs[:-1] < xs[1:])
        if not len(valid):
            continue
        n_left = (valid + 1).astype(float)
        ol = ones_left[valid]
        score = _weighted_children(ol, n_left, total_ones - ol, n - n_left) / n
        k = int(np.argmin(score))
        if best is None or score[k] < best.impurity:
            i = valid[k]
            best = Split(int(j), float((xs[i] + xs[i + 1]) / 2), float(score[k]))
    if best is None or best.impurity >= gini(total_ones, n) - _MIN_GAIN:
        return None
    return best


@dataclass(eq=False)
class DecisionTree:
    """Flattened binary tree; ``feature[i] == -1`` marks node ``i`` as a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __eq__(self, other):
        return isinstance(other, DecisionTree) and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("feature", "threshold", "left", "right", "value")
        )

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                break
            rows = np.flatnonzero(inner)
            go_left = X[rows, feat[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])
        return self.value[node]


class _TreeBuilder:
    def __init__(self, X, y, max_depth, features_per_split, rng):
        self.X, self.y = X, y
        self.max_depth = max_depth
        self.k = features_per_split
        self.rng = rng
        self.nodes = []  # [feature, threshold, left, right, value]

    def build(self, idx) -> DecisionTree:
        self._grow(idx, 0)
        arr = list(zip(*self.nodes))
        return DecisionTree(
            feature=np.array(arr[0], dtype=np.int64),
            threshold=np.array(arr[1], dtype=float),
            left=np.array(arr[2], dtype=np.int64),
            right=np.array(arr[3], dtype=np.int64),
            value=np.array(arr[4], dtype=np.int64),
        )

    def _grow(self, idx, depth) -> int:
        node = len(self.nodes)
        y = self.y[idx]
        ones = int(y.sum())
        majority = 1 if 2 * ones >= len(y) else 0
        self.nodes.append([-1, 0.0, -1, -1, majority])
        if depth >= self.max_depth:
            return node
        n_features = self.X.shape[1]
        feats = np.sort(self.rng.choice(n_features, size=self.k, replace=False))
        split = best_split(self.X[idx], y, feats)
        if split is None:
            return node
        mask = self.X[idx, split.feature] <= split.threshold
        left = self._grow(idx[mask], depth + 1)
        right = self._grow(idx[~mask], depth + 1)
        self.nodes[node] = [split.feature, split.threshold, left, right, majority]
        return node


def bootstrap(n_rows: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n_rows`` indices with replacement; the never-drawn rows are out-of-bag."""
    if n_rows < 1:
        raise ContractError("bootstrap needs at least one row")
    in_bag = rng.integers(0, n_rows, size=n_rows)
    drawn = np.zeros(n_rows, dtype=bool)
    drawn[in_bag] = True
    return in_bag, np.flatnonzero(~drawn)


@dataclass(eq=False)
class RandomForest:
    trees: list[DecisionTree]
    n_trees: int
    max_depth: int
    features_per_split: int
    oob_indices: list[np.ndarray] = field(default_factory=list)
    rng_seed: int = 0
    n_features: int = len(FEATURES)

    def __eq__(self, other):
        return (
            isinstance(other, RandomForest)
            and (self.n_trees, self.max_depth, self.features_per_split, self.rng_seed)
            == (other.n_trees, other.max_depth, other.features_per_split, other.rng_seed)
            and self.trees == other.trees
        )


def default_features_per_split(n_features: int = len(FEATURES)) -> int:
    return math.ceil(math.sqrt(n_features))


def train(ts: TrainingSet, n_trees: int = 10, max_depth: int = 3,
          features_per_split: int | None = None, seed: int = 0) -> RandomForest:
    if n_trees < 1:
        raise ConfigError("need at least one tree", "n_trees")
    if max_depth < 1:
        raise ConfigError("depth must be >= 1", "max_depth")
    n_features = ts.features.shape[1]
    k = default_features_per_split(n_features) if features_per_split is None else features_per_split
    if not 1 <= k <= n_features:
        raise ConfigError(f"must be in [1, {n_features}]", "features_per_split")
    if len(ts) == 0:
        raise ContractError("empty training set")
    trees, oobs = [], []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        in_bag, oob = bootstrap(len(ts), rng)
        trees.append(_TreeBuilder(ts.features, ts.labels, max_depth, k, rng).build(in_bag))
        oobs.append(oob)
    return RandomForest(trees, n_trees, max_depth, k, oobs, seed, n_features)


def _as_matrix(fv) -> np.ndarray:
    if isinstance(fv, FeatureVector):
        return fv.as_array()[None, :]
    if isinstance(fv, TrainingSet):
        return fv.features
    return np.atleast_2d(np.asarray(fv, dtype=float))


def votes(rf: RandomForest, fv):
    """Number of trees voting class 1; an int for one vector, an array for a matrix."""
    X = _as_matrix(fv)
    total = np.zeros(len(X), dtype=np.int64)
    for tree in rf.trees:
        total += tree.predict(X)
    return int(total[0]) if isinstance(fv, FeatureVector) else total


def psr(rf: RandomForest, fv):
    return votes(rf, fv) / rf.n_trees


def predict(rf: RandomForest, fv):
    """Class 1 iff at least half the trees vote for it (a tie predicts 1)."""
    v = votes(rf, fv)
    result = 2 * np.asarray(v) >= rf.n_trees
    return int(result) if np.ndim(result) == 0 else result.astype(np.int64)


def accuracy(rf: RandomForest, dataset: TrainingSet) -> float:
    if len(dataset) == 0:
        raise ContractError("accuracy of an empty dataset")
    return float(np.mean(predict(rf, dataset.features) == dataset.labels))


def _permutation_drop(tree: DecisionTree, X, y, feature: int, perm) -> float:
    base = np.mean(tree.predict(X) == y)
    Xp = X.copy()
    Xp[:, feature] = X[perm, feature]
    return float(base - np.mean(tree.predict(Xp) == y))


def variable_importance(rf: RandomForest, ts: TrainingSet, seed: int = 0) -> np.ndarray:
    """Mean drop in per-tree OOB accuracy when one feature's OOB values are shuffled."""
    rng = np.random.default_rng(seed)
    scores = np.zeros(ts.features.shape[1])
    used = 0
    for tree, oob in zip(rf.trees, rf.oob_indices):
        if not len(oob):
            continue
        used += 1
        X, y = ts.features[oob], ts.labels[oob]
        for j in range(len(scores)):
            if j in tree.used_features():
                scores[j] += _permutation_drop(tree, X, y, j, rng.permutation(len(oob)))
    return scores / used if used else scores


def to_text(rf: RandomForest) -> str:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "params": {
            "n_trees": rf.n_trees,
            "max_depth": rf.max_depth,
            "features_per_split": rf.features_per_split,
            "rng_seed": rf.rng_seed,
            "n_features": rf.n_features,
            "features": list(FEATURES),
        },
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": [repr(v) for v in t.threshold.tolist()],
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
            }
            for t in rf.trees
        ],
        "oob_indices": [o.tolist() for o in rf.oob_indices],
    }
    return json.dumps(doc, indent=1)


def from_text(text: str) -> RandomForest:
    doc = json.loads(text)
    if doc.get("format") != FORMAT_NAME:
        raise ValueError("not a serialized random forest")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported forest format version {doc.get('version')}")
    p = doc["params"]
    trees = [
        DecisionTree(
            feature=np.array(t["feature"], dtype=np.int64),
            threshold=np.array([float(v) for v in t["threshold"]]),
            left=np.array(t["left"], dtype=np.int64),
            right=np.array(t["right"], dtype=np.int64),
            value=np.array(t["value"], dtype=np.int64),
        )
        for t in doc["trees"]
    ]
    oob = [np.array(o, dtype=np.int64) for o in doc.get("oob_indices", [])]
    return RandomForest(trees, p["n_trees"], p["max_depth"], p["features_per_split"], oob,
                        p["rng_seed"], p["n_features"])
