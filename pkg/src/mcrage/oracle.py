"""Synthetic datasets with known structure, used by tests and the demo scripts."""
from __future__ import annotations

import numpy as np

from .schema import ColumnSchema, Dataset

GAUSSIAN_MEANS = np.array([[-2.0, 0.0], [2.0, 0.0]])

# (label, sex) -> feature mean. The two sexes use different decision boundaries,
# so a classifier has to learn the minority sex's boundary from its own rows.
FAIRNESS_MEANS = {
    (0, 0): (-1.0, 0.0),
    (1, 0): (1.0, 0.0),
    (0, 1): (0.0, -1.0),
    (1, 1): (0.0, 1.0),
}


def gaussian_two_class(n_per_class: int = 1000, seed: int = 0) -> Dataset:
    """Two unit-covariance 2-D Gaussians at (-2, 0) and (2, 0); the label is the class."""
    rng = np.random.default_rng(seed)
    labels = np.repeat([0, 1], n_per_class)
    feats = GAUSSIAN_MEANS[labels] + rng.standard_normal((labels.size, 2))
    schema = ColumnSchema(("x1", "x2"), (), "y", attribute_levels=(), label_levels=("0", "1"))
    return Dataset(feats, np.zeros((labels.size, 0), dtype=np.int64), labels, schema)


def fairness_oracle(n_per_cell: int = 500, seed: int = 0, scale: float = 1.0) -> Dataset:
    """Balanced 2 x 2 lattice of (label, sex) cells with sex-dependent class geometry."""
    rng = np.random.default_rng(seed)
    cells = sorted(FAIRNESS_MEANS)
    labels = np.repeat([y for y, _ in cells], n_per_cell)
    sex = np.repeat([s for _, s in cells], n_per_cell)
    means = np.array([FAIRNESS_MEANS[(y, s)] for y, s in zip(labels, sex)]) * scale
    feats = means + rng.standard_normal((labels.size, 2))
    perm = rng.permutation(labels.size)
    schema = ColumnSchema(
        ("x1", "x2"), ("sex",), "y", attribute_levels=(("M", "F"),), label_levels=("0", "1")
    )
    return Dataset(feats[perm], sex[perm, None], labels[perm], schema)
