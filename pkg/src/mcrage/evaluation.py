"""Downstream classifier, fairness metrics and distribution diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .forest import Forest, ForestConfig, fit_forest_arrays
from .schema import Dataset, GroupIndexMap


class UndefinedMetricError(ValueError):
    pass


def predictors(ds: Dataset) -> np.ndarray:
    """Continuous features followed by attribute codes; the classifier sees demographics."""
    return np.column_stack([ds.features, ds.attributes.astype(np.float64)])


def fit_forest(train: Dataset, cfg: ForestConfig = ForestConfig()) -> Forest:
    k = len(train.schema.label_levels) if train.schema.label_levels else None
    return fit_forest_arrays(predictors(train), train.labels, cfg, n_classes=k)


def predict_proba(forest: Forest, rows, positive: int = 1) -> np.ndarray:
    X = predictors(rows) if isinstance(rows, Dataset) else rows
    return forest.predict_proba(X, positive)


# ---------------------------------------------------------------------------
# Metrics


def accuracy(labels, preds) -> float:
    labels, preds = np.asarray(labels), np.asarray(preds)
    if labels.size == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean(labels == preds))


def precision_recall(labels, preds, positive: int = 1) -> tuple[float, float]:
    labels, preds = np.asarray(labels), np.asarray(preds)
    tp = int(np.sum((preds == positive) & (labels == positive)))
    fp = int(np.sum((preds == positive) & (labels != positive)))
    fn = int(np.sum((preds != positive) & (labels == positive)))
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return p, r


def f1(labels, preds, positive: int = 1) -> float:
    if np.asarray(labels).size == 0:
        raise ValueError("F1 of an empty set")
    p, r = precision_recall(labels, preds, positive)
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def auroc(labels, scores, positive: int = 1) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via average ranks (Mann-Whitney U)."""
    labels, scores = np.asarray(labels), np.asarray(scores, dtype=np.float64)
    pos = labels == positive
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes present")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion(labels, preds, n_classes: int) -> np.ndarray:
    """(true, predicted) count matrix."""
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (np.asarray(labels), np.asarray(preds)), 1)
    return m


@dataclass
class GroupMetrics:
    accuracy: float
    f1: float
    support: int


@dataclass
class EvalReport:
    accuracy: float
    f1: float
    auroc: float | None
    confusion: np.ndarray
    per_group: dict[int, GroupMetrics] = field(default_factory=dict)
    positive: int = 1

    def to_dict(self, gmap: GroupIndexMap | None = None) -> dict:
        out = {
            "accuracy": self.accuracy,
            "f1": self.f1,
            "auroc": self.auroc,
            "positive_label_code": self.positive,
            "confusion": self.confusion.tolist(),
            "per_group": {},
        }
        for g in sorted(self.per_group):
            m = self.per_group[g]
            entry = {"accuracy": m.accuracy, "f1": m.f1, "support": m.support}
            if gmap is not None:
                entry["tuple"] = list(gmap.decode(g))
            out["per_group"][str(g)] = entry
        return out


def per_group_report(forest: Forest, test: Dataset, gmap: GroupIndexMap, positive: int = 1) -> EvalReport:
    """Overall metrics plus metrics restricted to each group's rows; empty groups are omitted."""
    if test.n == 0:
        raise ValueError("empty test set")
    X = predictors(test)
    votes = forest.votes(X)
    preds = np.argmax(votes, axis=1)
    y = test.labels
    try:
        auc = auroc(y, votes[:, positive], positive)
    except UndefinedMetricError:
        auc = None
    gids = gmap.group_ids(test)
    per_group = {}
    for g in np.unique(gids):
        m = gids == g
        per_group[int(g)] = GroupMetrics(accuracy(y[m], preds[m]), f1(y[m], preds[m], positive), int(m.sum()))
    return EvalReport(
        accuracy=accuracy(y, preds),
        f1=f1(y, preds, positive),
        auroc=auc,
        confusion=confusion(y, preds, forest.n_classes),
        per_group=per_group,
        positive=positive,
    )


# ---------------------------------------------------------------------------
# Distribution diagnostics


def wasserstein_1d(u, v) -> float:
    u = np.sort(np.asarray(u, dtype=np.float64))
    v = np.sort(np.asarray(v, dtype=np.float64))
    if u.size == 0 or v.size == 0:
        raise ValueError("W1 needs non-empty samples")
    if u.size == v.size:
        return float(np.mean(np.abs(u - v)))
    # integral of |F_u - F_v| over the merged support
    allv = np.concatenate([u, v])
    allv.sort()
    widths = np.diff(allv)
    cu = np.searchsorted(u, allv[:-1], side="right") / u.size
    cv = np.searchsorted(v, allv[:-1], side="right") / v.size
    return float(np.sum(np.abs(cu - cv) * widths))


@dataclass
class DistributionComparison:
    w1: float
    edges: np.ndarray
    real_hist: np.ndarray
    synthetic_hist: np.ndarray

    def rows(self):
        """(bin_lo, bin_hi, real_density, synthetic_density) for plotting."""
        for i in range(self.real_hist.size):
            yield self.edges[i], self.edges[i + 1], self.real_hist[i], self.synthetic_hist[i]


def feature_distribution_distance(real, synthetic, bins: int = 50) -> DistributionComparison:
    real = np.asarray(real, dtype=np.float64)
    synthetic = np.asarray(synthetic, dtype=np.float64)
    w = wasserstein_1d(real, synthetic)
    lo = min(real.min(), synthetic.min())
    hi = max(real.max(), synthetic.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    rh, _ = np.histogram(real, bins=edges, density=True)
    sh, _ = np.histogram(synthetic, bins=edges, density=True)
    return DistributionComparison(w, edges, rh, sh)


def _power_iteration(C: np.ndarray, v0: np.ndarray, tol: float, max_iter: int) -> tuple[float, np.ndarray]:
    v = v0 / np.linalg.norm(v0)
    lam = 0.0
    for _ in range(max_iter):
        w = C @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v
        w /= norm
        lam = float(w @ C @ w)
        if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < tol:
            v = w
            break
        v = w
    return lam, v


def pca_project(features, tol: float = 1e-9, max_iter: int = 10_000) -> tuple[np.ndarray, np.ndarray]:
    """Project onto the top two principal axes found by power iteration with deflation.

    Returns ((n, 2) coordinates, (2,) explained variances). Variances use the
    population convention. Each axis is signed so its largest-magnitude loading is
    positive.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3:
        raise ValueError("pca_project needs at least 3 rows")
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc / X.shape[0]
    d = C.shape[0]
    rng = np.random.default_rng(0)
    comps, variances = [], []
    scale = max(float(np.trace(C)), 1e-300)
    for _ in range(2):
        if d == len(comps):
            comps.append(np.zeros(d))
            variances.append(0.0)
            continue
        v0 = rng.standard_normal(d)
        for u in comps:
            v0 -= (v0 @ u) * u
        lam, v = _power_iteration(C, v0, tol, max_iter)
        if lam <= 1e-12 * scale:
            lam, v = 0.0, np.zeros(d)
        else:
            i = int(np.argmax(np.abs(v)))
            v = v if v[i] > 0 else -v
        comps.append(v)
        variances.append(max(lam, 0.0))
        C = C - lam * np.outer(v, v)
    W = np.column_stack(comps)
    return Xc @ W, np.array(variances)
