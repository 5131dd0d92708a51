"""Random forest of Gini-impurity decision trees (bootstrap + random feature subsets)."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ForestConfig:
    tree_count: int = 100
    max_depth: int | None = None
    features_per_split: int | None = None  # None -> ceil(sqrt(p))
    min_samples_leaf: int = 1
    seed: int = 0
    bootstrap: bool = True

    def __post_init__(self):
        if self.tree_count < 1:
            raise ValueError("tree_count must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")

    def mtry(self, p: int) -> int:
        m = self.features_per_split if self.features_per_split is not None else math.ceil(math.sqrt(p))
        if not 1 <= m <= p:
            raise ValueError(f"features_per_split must lie in [1, {p}], got {m}")
        return m


@dataclass
class Tree:
    feature: np.ndarray  # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_class: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            r, nd = rows[active], node[active]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.leaf_class[self.apply(X)]

    @property
    def depth(self) -> int:
        depth = np.zeros(self.feature.size, dtype=np.int64)
        for i in range(self.feature.size):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())


def gini(counts: np.ndarray) -> np.ndarray:
    """Gini impurity of class-count rows (last axis)."""
    tot = counts.sum(axis=-1, keepdims=True)
    p = counts / np.maximum(tot, 1)
    return 1.0 - np.sum(p * p, axis=-1)


def best_split(x: np.ndarray, y_onehot: np.ndarray, min_leaf: int):
    """Lowest weighted-Gini threshold on one feature, or None if no valid cut exists.

    Returns (weighted impurity, threshold). Cuts are placed midway between
    consecutive distinct sorted values.
    """
    n = x.size
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cum = np.cumsum(y_onehot[order], axis=0)
    left, total = cum[:-1], cum[-1]  # left[i]: class counts of sorted rows 0..i
    right = total - left
    n_left = np.arange(1, n)
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
    if not valid.any():
        return None
    score = (n_left * gini(left) + (n - n_left) * gini(right)) / n
    score = np.where(valid, score, np.inf)
    i = int(np.argmin(score))
    return float(score[i]), float(0.5 * (xs[i] + xs[i + 1]))


def fit_tree(X: np.ndarray, y: np.ndarray, n_classes: int, cfg: ForestConfig, rng: np.random.Generator) -> Tree:
    p = X.shape[1]
    mtry = cfg.mtry(p)
    onehot = np.eye(n_classes, dtype=np.int64)[y]
    feature, threshold, left, right, leaf_class = [], [], [], [], []

    def new_node():
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (leaf_class, 0)):
            lst.append(v)
        return len(feature) - 1

    # Breadth-first growth: a depth-capped tree is a truncation of the uncapped one
    # grown from the same generator.
    root = new_node()
    queue = deque([(root, np.arange(X.shape[0]), 0)])
    while queue:
        node, idx, depth = queue.popleft()
        counts = onehot[idx].sum(axis=0)
        leaf_class[node] = int(np.argmax(counts))
        if np.count_nonzero(counts) <= 1 or (cfg.max_depth is not None and depth >= cfg.max_depth):
            continue
        if idx.size < 2 * cfg.min_samples_leaf:
            continue
        best = None
        tried = 0
        for f in rng.permutation(p):
            if tried == mtry:
                break
            col = X[idx, f]
            if col.min() == col.max():
                continue  # constant features do not count towards mtry
            tried += 1
            res = best_split(col, onehot[idx], cfg.min_samples_leaf)
            if res is not None and (best is None or res[0] < best[0]):
                best = (res[0], res[1], int(f))
        if best is None:
            continue
        _, thr, f = best
        mask = X[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        queue.append((lnode, idx[mask], depth + 1))
        queue.append((rnode, idx[~mask], depth + 1))

    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        leaf_class=np.array(leaf_class, dtype=np.int64),
    )


@dataclass
class Forest:
    trees: list[Tree]
    n_classes: int
    n_features: int

    def votes(self, X: np.ndarray) -> np.ndarray:
        """(n, n_classes) fraction of trees voting for each class."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} predictor columns, got {X.shape}")
        v = np.zeros((X.shape[0], self.n_classes))
        rows = np.arange(X.shape[0])
        for tree in self.trees:
            v[rows, tree.predict(X)] += 1.0
        return v / len(self.trees)

    def predict_proba(self, X: np.ndarray, positive: int = 1) -> np.ndarray:
        return self.votes(X)[:, positive]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.votes(X), axis=1)


def fit_forest_arrays(X: np.ndarray, y: np.ndarray, cfg: ForestConfig, n_classes: int | None = None) -> Forest:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] < 2:
        raise ValueError("need at least 2 training rows")
    if np.unique(y).size < 2:
        raise ValueError("training labels contain a single class")
    k = int(y.max()) + 1 if n_classes is None else n_classes
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.tree_count)
    trees = []
    for ss in children:
        rng = np.random.default_rng(ss)
        idx = rng.integers(0, X.shape[0], X.shape[0]) if cfg.bootstrap else np.arange(X.shape[0])
        trees.append(fit_tree(X[idx], y[idx], k, cfg, rng))
    return Forest(trees, k, X.shape[1])
