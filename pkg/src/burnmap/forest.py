"""Random forest in probability mode, written from scratch.

Trees are CART with Gini impurity grown on bootstrap resamples, with a random
subset of candidate features at every split. A tree's output for a sample is
the burned fraction of the training samples in the leaf it lands in; the
forest averages those fractions.

Each tree draws from its own PRNG stream, seeded by ``(rng_seed, tree_index)``,
so trees are independent of training order and could be built in parallel.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import FormatError, TrainingError, ValidationError
from .spectral import FEATURE_NAMES, N_FEATURES

MODEL_FORMAT = "burnmap.forest"
MODEL_VERSION = 1
TIE_EPS = 1e-9


class NoSplitWarning(UserWarning):
    """The forest contains no split, so importances are all zero."""


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    features_per_split: int = int(math.isqrt(N_FEATURES))
    max_depth: int | None = None
    min_leaf: int = 1
    rng_seed: int = 0
    # test hook: grow every tree on the full training set
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValidationError("n_trees must be >= 1")
        if not 1 <= self.features_per_split <= N_FEATURES:
            raise ValidationError(f"features_per_split must be in [1, {N_FEATURES}]")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValidationError("max_depth must be >= 0 or None")
        if self.min_leaf < 1:
            raise ValidationError("min_leaf must be >= 1")
        if self.rng_seed < 0 or self.rng_seed >= 2**64:
            raise ValidationError("rng_seed must fit in an unsigned 64-bit integer")


@dataclass(eq=False)
class Tree:
    """Flat array representation; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_fraction: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def n_splits(self) -> int:
        return int(np.count_nonzero(self.feature >= 0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        flat = X.ravel()
        stride = X.shape[1]
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = flat[active * stride + self.feature[nd]] <= self.threshold[nd]
            nxt = np.where(go_left, self.left[nd], self.right[nd])
            node[active] = nxt
            active = active[self.feature[nxt] >= 0]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.leaf_fraction[self.apply(X)]

    def predict_one(self, x) -> float:
        node = 0
        feature, threshold = self.feature, self.threshold
        while feature[node] >= 0:
            if x[feature[node]] <= threshold[node]:
                node = self.left[node]
            else:
                node = self.right[node]
        return float(self.leaf_fraction[node])

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "leaf_fraction": self.leaf_fraction.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "Tree":
        tree = cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["leaf_fraction"], dtype=np.float64),
        )
        n = tree.node_count
        if n == 0 or not all(len(a) == n for a in (tree.threshold, tree.left, tree.right, tree.leaf_fraction)):
            raise ValueError("tree arrays are empty or of unequal length")
        inner = tree.feature >= 0
        if np.any(tree.feature >= N_FEATURES):
            raise ValueError("feature index out of range")
        for child in (tree.left[inner], tree.right[inner]):
            if np.any(child <= 0) or np.any(child >= n):
                raise ValueError("child index out of range")
        if np.any((tree.leaf_fraction < 0) | (tree.leaf_fraction > 1)):
            raise ValueError("leaf fraction outside [0, 1]")
        return tree


@dataclass(eq=False)
class ForestModel:
    trees: list[Tree]
    params: ForestParams
    n_samples: int
    n_burned: int
    importances: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))

    @property
    def n_splits(self) -> int:
        return sum(t.n_splits for t in self.trees)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Burn probability for every row of a ``(n, 14)`` feature matrix."""
        X = np.asarray(X, dtype=np.float64)
        total = np.zeros(len(X), dtype=np.float64)
        for tree in self.trees:
            total += tree.predict(X)
        return total / len(self.trees)

    def to_json(self) -> str:
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "params": asdict(self.params),
            "n_samples": self.n_samples,
            "n_burned": self.n_burned,
            "feature_names": list(FEATURE_NAMES),
            "importances": [float(v) for v in self.importances],
            "trees": [t.to_dict() for t in self.trees],
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ForestModel":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"model is not valid JSON ({exc})") from exc
        if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
            raise FormatError("not a forest model document")
        if doc.get("version") != MODEL_VERSION:
            raise FormatError(f"unsupported model version {doc.get('version')!r}")
        try:
            params = ForestParams(**doc["params"])
            trees = [Tree.from_dict(t) for t in doc["trees"]]
            importances = np.asarray(doc["importances"], dtype=np.float64)
            model = cls(trees, params, int(doc["n_samples"]), int(doc["n_burned"]), importances)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed model document: {exc}") from exc
        if not trees or importances.shape != (N_FEATURES,):
            raise FormatError("model has no trees or wrong importance length")
        return model


def save_model(model: ForestModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(model.to_json())


def load_model(path) -> ForestModel:
    with open(path) as fh:
        return ForestModel.from_json(fh.read())


# -- training ------------------------------------------------------------------

def _best_split(X, y, idx, candidates, min_leaf):
    """Lowest weighted-Gini split over ``candidates`` (sorted feature indices).

    Returns ``(feature, threshold, score)`` or None. ``score`` is the Gini
    impurity summed over samples (n_left*G_left + n_right*G_right). Ties keep
    the lowest feature index, then the lowest threshold; scores within
    TIE_EPS are ties, so exact rational ties survive float rounding.
    """
    yy = y[idx]
    n = len(idx)
    total_pos = yy.sum()
    sizes = np.arange(min_leaf, n - min_leaf + 1)
    best = None
    for f in candidates:
        x = X[idx, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        cpos = np.cumsum(yy[order])
        distinct = xs[sizes - 1] < xs[sizes]
        if not distinct.any():
            continue
        nl = sizes[distinct]
        pl = cpos[nl - 1]
        nr = n - nl
        pr = total_pos - pl
        score = 2.0 * pl * (nl - pl) / nl + 2.0 * pr * (nr - pr) / nr
        k = int(np.flatnonzero(score <= score.min() + TIE_EPS)[0])
        if best is None or score[k] < best[2] - TIE_EPS:
            lo, hi = xs[nl[k] - 1], xs[nl[k]]
            threshold = lo + (hi - lo) / 2.0
            if not lo <= threshold < hi:
                threshold = lo
            best = (int(f), float(threshold), float(score[k]))
    return best


def _grow_tree(X, y, params: ForestParams, rng: np.random.Generator):
    n_total, n_features = X.shape
    feature, threshold, left, right, frac = [], [], [], [], []
    importance = np.zeros(n_features, dtype=np.float64)

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        frac.append(float(y[idx].sum()) / len(idx))
        return len(feature) - 1

    all_idx = np.arange(n_total)
    stack = [(new_node(all_idx), all_idx, 0)]
    while stack:
        node, idx, depth = stack.pop()
        n = len(idx)
        pos = int(y[idx].sum())
        if pos == 0 or pos == n or n < 2 * params.min_leaf:
            continue
        if params.max_depth is not None and depth >= params.max_depth:
            continue
        # draw features until enough non-constant ones are found
        candidates = []
        for f in rng.permutation(n_features):
            col = X[idx, f]
            if col.min() < col.max():
                candidates.append(int(f))
                if len(candidates) == params.features_per_split:
                    break
        if not candidates:
            continue
        split = _best_split(X, y, idx, sorted(candidates), params.min_leaf)
        if split is None:
            continue
        f, thr, score = split
        parent = 2.0 * pos * (n - pos) / n
        importance[f] += (parent - score) / n_total
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    tree = Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(frac, dtype=np.float64),
    )
    return tree, importance


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tree_index]))


def train(features, labels, params: ForestParams | None = None) -> ForestModel:
    """Fit a forest on an ``(n, 14)`` feature matrix and 0/1 labels."""
    params = params or ForestParams()
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or len(X) == 0:
        raise ValidationError("training set is empty")
    if X.shape[1] != N_FEATURES:
        raise ValidationError(f"expected {N_FEATURES} features, got {X.shape[1]}")
    if len(y) != len(X):
        raise ValidationError("features and labels differ in length")
    if not np.isfinite(X).all():
        raise ValidationError("training features must be finite")
    if not np.isin(y, (0, 1)).all():
        raise ValidationError("labels must be 0 or 1")
    y = y.astype(np.int64)
    n = len(y)
    n_burned = int(y.sum())
    if n < 2 or n_burned in (0, n):
        raise TrainingError("training requires at least two samples covering both classes")

    trees = []
    per_tree = np.zeros((params.n_trees, N_FEATURES))
    for t in range(params.n_trees):
        rng = tree_rng(params.rng_seed, t)
        if params.bootstrap:
            sample = rng.integers(0, n, size=n)
            tree, imp = _grow_tree(X[sample], y[sample], params, rng)
        else:
            tree, imp = _grow_tree(X, y, params, rng)
        trees.append(tree)
        per_tree[t] = imp

    mean = per_tree.mean(axis=0)
    total = mean.sum()
    importances = mean / total if total > 0 else np.zeros(N_FEATURES)
    return ForestModel(trees, params, n, n_burned, importances)


def train_samples(samples, params: ForestParams | None = None) -> ForestModel:
    """Train from LabeledSample records (reflectances), building features first."""
    from .spectral import feature_matrix

    if not samples:
        raise ValidationError("training set is empty")
    X, y, ok = feature_matrix(samples)
    dropped = int((~ok).sum())
    if dropped:
        warnings.warn(f"dropped {dropped} samples with singular spectral indices", stacklevel=2)
    return train(X, y, params)


def predict_probability(model: ForestModel, f) -> float:
    """Mean leaf burned-fraction over trees for one feature vector."""
    x = np.asarray(f, dtype=np.float64)
    total = 0.0
    for tree in model.trees:
        total += tree.predict_one(x)
    return total / len(model.trees)


def feature_importances(model: ForestModel) -> np.ndarray:
    """Normalised mean decrease in Gini impurity per feature.

    A forest without any split yields zeros and a NoSplitWarning.
    """
    if model.n_splits == 0 or model.importances.sum() <= 0:
        warnings.warn("forest has no splits; importances are all zero", NoSplitWarning, stacklevel=2)
        return np.zeros(N_FEATURES)
    return model.importances.copy()
