"""Random forest of CART trees with impurity-based feature importances.

Trees are grown to purity on bootstrap resamples. At each node features are
visited in a random order until ``max_features`` non-constant ones have been
scored, so a node never stalls on constant columns.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from sersml._parallel import child_rng, thread_map
from sersml.errors import ConfigError, DegenerateDataWarning, DimensionMismatch

CRITERIA = ("gini", "entropy")


@dataclass(frozen=True)
class ForestConfig:
    n_estimators: int = 100
    max_features: int | None = None  # None: floor(sqrt(n_features))
    criterion: str = "gini"
    seed: int = 0
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ConfigError("n_estimators must be positive")
        if self.criterion not in CRITERIA:
            raise ConfigError(f"criterion must be one of {CRITERIA}")
        if self.max_features is not None and self.max_features < 1:
            raise ConfigError("max_features must be at least 1")

    def resolve_max_features(self, n_features: int) -> int:
        if self.max_features is None:
            return max(1, int(np.sqrt(n_features)))
        if self.max_features > n_features:
            raise ConfigError(f"max_features={self.max_features} exceeds {n_features} features")
        return self.max_features


def _impurity(p: np.ndarray, criterion: str) -> np.ndarray:
    """Impurity of class-probability vectors along the last axis."""
    if criterion == "gini":
        return 1.0 - (p * p).sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(p > 0, np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return -(p * logs).sum(axis=-1)


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat tree arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    importances: np.ndarray  # unnormalized weighted impurity decrease per feature

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                return self.value[node]
            r, n, f = rows[active], node[active], feat[active]
            go_left = X[r, f] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("feature", "threshold", "left", "right", "value", "importances")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.array(d["feature"], dtype=np.int64), np.array(d["threshold"], dtype=np.float64),
            np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
            np.array(d["value"], dtype=np.int64), np.array(d["importances"], dtype=np.float64),
        )


def _best_split(X, onehot, idx, counts, feats, need, criterion):
    """Score candidate ``feats`` at one node.

    Returns ``(feature, threshold, weighted_child_impurity, n_left,
    left_impurity, right_impurity, n_nonconstant_scored)``; feature is None
    when no candidate can split.
    """
    m = idx.size
    Xn = X[np.ix_(idx, feats)]
    order = np.argsort(Xn, axis=0, kind="stable")
    sv = np.take_along_axis(Xn, order, axis=0)
    left = np.cumsum(onehot[idx][order], axis=0)[:-1]  # (m-1, f, C)
    right = counts - left
    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    n_right = m - n_left
    imp_l = _impurity(left / n_left[..., None], criterion)
    imp_r = _impurity(right / n_right[..., None], criterion)
    weighted = (n_left * imp_l + n_right * imp_r) / m
    valid = sv[1:] > sv[:-1]
    nonconst = np.flatnonzero(valid.any(axis=0))
    scored = nonconst[:need]
    if scored.size == 0:
        return None, 0.0, np.inf, 0, 0.0, 0.0, 0
    mask = np.full(len(feats), False)
    mask[scored] = True
    cand = np.where(valid & mask[None, :], weighted, np.inf)
    flat = np.argmin(cand.T)  # feature-major: earliest sampled feature wins ties
    fi, pos = divmod(int(flat), m - 1)
    lo, hi = sv[pos, fi], sv[pos + 1, fi]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:
        thr = lo
    return (int(feats[fi]), float(thr), float(cand[pos, fi]), pos + 1,
            float(imp_l[pos, fi]), float(imp_r[pos, fi]), int(scored.size))


def grow_tree(X: np.ndarray, y: np.ndarray, n_classes: int, max_features: int,
              criterion: str, rng: np.random.Generator) -> Tree:
    n, F = X.shape
    onehot = np.eye(n_classes)[y]
    feature, threshold, left, right, value = [], [], [], [], []
    importances = np.zeros(F)

    def new_node():
        for arr, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0)):
            arr.append(v)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(n))]
    while stack:
        node, idx = stack.pop()
        counts = onehot[idx].sum(axis=0)
        value[node] = int(np.argmax(counts))
        if idx.size < 2 or np.count_nonzero(counts) == 1:
            continue
        node_imp = float(_impurity(counts / idx.size, criterion))
        perm = rng.permutation(F)
        best = None
        seen = 0
        for start in range(0, F, max_features):
            need = max_features - seen
            if need <= 0:
                break
            res = _best_split(X, onehot, idx, counts, perm[start:start + max_features], need, criterion)
            seen += res[6]
            if res[0] is not None and (best is None or res[2] < best[2]):
                best = res
        if best is None:
            continue
        f, thr, _, _, imp_l, imp_r, _ = best
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        importances[f] += (idx.size * node_imp - li.size * imp_l - ri.size * imp_r) / n
        feature[node], threshold[node] = f, thr
        left[node] = new_node()
        right[node] = new_node()
        stack.append((right[node], ri))
        stack.append((left[node], li))
    return Tree(np.array(feature), np.array(threshold, dtype=np.float64), np.array(left),
                np.array(right), np.array(value), importances)


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple[Tree, ...]
    n_classes: int
    n_features: int
    config: ForestConfig
    importances: np.ndarray

    kind = "rfc"

    def predict(self, X) -> np.ndarray:
        return forest_predict(self, X)

    def to_dict(self) -> dict:
        c = self.config
        return {
            "config": {"n_estimators": c.n_estimators, "max_features": c.max_features,
                       "criterion": c.criterion, "seed": c.seed, "bootstrap": c.bootstrap},
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "importances": self.importances.tolist(),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        return cls(tuple(Tree.from_dict(t) for t in d["trees"]), int(d["n_classes"]),
                   int(d["n_features"]), ForestConfig(**d["config"]),
                   np.array(d["importances"], dtype=np.float64))


def forest_fit(X, y, config: ForestConfig = ForestConfig(), n_classes: int | None = None,
               threads: int = 1) -> ForestModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise DimensionMismatch("X must be (n, d) with one label per row")
    n, F = X.shape
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    max_features = config.resolve_max_features(F)
    if np.unique(y).size < 2:
        warnings.warn("training data holds a single class; forest is constant", DegenerateDataWarning,
                      stacklevel=2)

    def _grow(t: int) -> Tree:
        rng = child_rng(config.seed, "tree", t)
        rows = rng.integers(0, n, n) if config.bootstrap else np.arange(n)
        return grow_tree(X[rows], y[rows], n_classes, max_features, config.criterion, rng)

    trees = tuple(thread_map(_grow, range(config.n_estimators), threads))
    per_tree = []
    for t in trees:
        s = t.importances.sum()
        if s > 0:
            per_tree.append(t.importances / s)
    if per_tree:
        imp = np.mean(per_tree, axis=0)
        imp = imp / imp.sum()
    else:
        imp = np.full(F, 1.0 / F)
    return ForestModel(trees, n_classes, F, config, imp)


def forest_predict(model: ForestModel, X) -> np.ndarray:
    """Majority vote over trees; ties go to the lowest class index."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise DimensionMismatch(f"expected {model.n_features} features, got {X.shape[1]}")
    votes = np.zeros((X.shape[0], model.n_classes), dtype=np.int64)
    rows = np.arange(X.shape[0])
    for tree in model.trees:
        np.add.at(votes, (rows, tree.apply(X)), 1)
    return np.argmax(votes, axis=1)


def forest_importances(model: ForestModel) -> np.ndarray:
    """Mean decrease in impurity per feature, summing to 1."""
    return model.importances.copy()
