"""Tabular datasets, standardization, imbalance induction and the group index map.

A *group* is one cell of the lattice ``label x attribute_1 x ... x attribute_L``.
Groups are flattened to a single integer id with a mixed-radix code where the
label is the least significant digit.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np


class IngestionError(ValueError):
    """Raised when a CSV cannot be turned into a Dataset."""


@dataclass(frozen=True)
class ColumnSchema:
    continuous_names: tuple[str, ...]
    attribute_names: tuple[str, ...]
    label_name: str
    # Category values in code order. Filled in by load_csv when left empty.
    attribute_levels: tuple[tuple[str, ...], ...] = ()
    label_levels: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "continuous_names", tuple(self.continuous_names))
        object.__setattr__(self, "attribute_names", tuple(self.attribute_names))
        object.__setattr__(
            self, "attribute_levels", tuple(tuple(str(v) for v in lv) for lv in self.attribute_levels)
        )
        object.__setattr__(self, "label_levels", tuple(str(v) for v in self.label_levels))
        names = [*self.continuous_names, *self.attribute_names, self.label_name]
        if any(not n for n in names):
            raise ValueError("column names must be non-empty")
        if len(set(names)) != len(names):
            raise ValueError(f"column names must be disjoint: {names}")
        if not self.continuous_names:
            raise ValueError("at least one continuous column is required")
        if self.attribute_levels and len(self.attribute_levels) != len(self.attribute_names):
            raise ValueError("attribute_levels must have one entry per attribute")

    @property
    def has_levels(self) -> bool:
        return bool(self.label_levels) and len(self.attribute_levels) == len(self.attribute_names)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        """(K_y, K_1, ..., K_L)."""
        if not self.has_levels:
            raise ValueError("schema has no category levels yet")
        return (len(self.label_levels), *(len(lv) for lv in self.attribute_levels))

    def attribute_index(self, name: str) -> int:
        try:
            return self.attribute_names.index(name)
        except ValueError:
            raise KeyError(f"unknown attribute {name!r}; have {list(self.attribute_names)}") from None

    def attribute_code(self, name: str, value) -> int:
        levels = self.attribute_levels[self.attribute_index(name)]
        if str(value) not in levels:
            raise KeyError(f"attribute {name!r} has no value {value!r}; levels {list(levels)}")
        return levels.index(str(value))

    def to_dict(self) -> dict:
        return {
            "continuous": list(self.continuous_names),
            "attributes": list(self.attribute_names),
            "label": self.label_name,
            "attribute_levels": [list(lv) for lv in self.attribute_levels],
            "label_levels": list(self.label_levels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSchema":
        return cls(
            continuous_names=tuple(d["continuous"]),
            attribute_names=tuple(d.get("attributes", ())),
            label_name=d["label"],
            attribute_levels=tuple(tuple(lv) for lv in d.get("attribute_levels", ())),
            label_levels=tuple(d.get("label_levels", ())),
        )


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, d) float64
    attributes: np.ndarray  # (n, L) int64
    labels: np.ndarray  # (n,) int64
    schema: ColumnSchema
    synthetic: np.ndarray | None = None  # (n,) bool provenance flag

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        n = f.shape[0]
        a = np.asarray(self.attributes, dtype=np.int64).reshape(n, len(self.schema.attribute_names))
        y = np.asarray(self.labels, dtype=np.int64).reshape(n)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "attributes", a)
        object.__setattr__(self, "labels", y)
        if self.synthetic is not None:
            s = np.asarray(self.synthetic, dtype=bool).reshape(n)
            object.__setattr__(self, "synthetic", s)
        if f.shape[1] != len(self.schema.continuous_names):
            raise ValueError("feature width does not match schema")
        if a.shape[1] != len(self.schema.attribute_names):
            raise ValueError("attribute width does not match schema")
        if not np.all(np.isfinite(f)):
            raise ValueError("features contain non-finite values")
        if self.schema.has_levels and n:
            card = self.schema.cardinalities
            if y.min() < 0 or y.max() >= card[0]:
                raise ValueError("label code out of range")
            for j in range(a.shape[1]):
                if a[:, j].min() < 0 or a[:, j].max() >= card[j + 1]:
                    raise ValueError(f"attribute {self.schema.attribute_names[j]!r} code out of range")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def group_tuples(self) -> np.ndarray:
        """(n, 1+L) matrix of (label, attribute codes) rows."""
        return np.column_stack([self.labels, self.attributes]).astype(np.int64)

    def synthetic_flags(self) -> np.ndarray:
        return np.zeros(self.n, dtype=bool) if self.synthetic is None else self.synthetic

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        syn = None if self.synthetic is None else self.synthetic[idx]
        return replace(
            self,
            features=self.features[idx],
            attributes=self.attributes[idx],
            labels=self.labels[idx],
            synthetic=syn,
        )

    def with_features(self, features: np.ndarray) -> "Dataset":
        return replace(self, features=features)

    def originals(self) -> "Dataset":
        return self.take(np.flatnonzero(~self.synthetic_flags()))


def concat(parts: Sequence[Dataset]) -> Dataset:
    """Stack datasets sharing one schema; the provenance flag is kept if any part has it."""
    if not parts:
        raise ValueError("nothing to concatenate")
    schema = parts[0].schema
    keep_flag = any(p.synthetic is not None for p in parts)
    return Dataset(
        features=np.concatenate([p.features for p in parts]),
        attributes=np.concatenate([p.attributes for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        schema=schema,
        synthetic=np.concatenate([p.synthetic_flags() for p in parts]) if keep_flag else None,
    )


# ---------------------------------------------------------------------------
# CSV ingestion


def load_csv(path, schema: ColumnSchema) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        needed = [*schema.continuous_names, *schema.attribute_names, schema.label_name]
        missing = [c for c in needed if c not in header]
        if missing:
            raise IngestionError(f"{path}: missing column(s) {missing}")
        cont_idx = [header.index(c) for c in schema.continuous_names]
        cat_names = [*schema.attribute_names, schema.label_name]
        cat_idx = [header.index(c) for c in cat_names]

        if schema.has_levels:
            levels = [list(lv) for lv in schema.attribute_levels] + [list(schema.label_levels)]
        else:
            levels = [[] for _ in cat_names]

        feats, codes = [], []
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < len(header):
                raise IngestionError(f"{path}:{rowno}: expected {len(header)} cells, got {len(row)}")
            vals = []
            for name, j in zip(schema.continuous_names, cont_idx):
                cell = row[j].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise IngestionError(
                        f"{path}:{rowno}: column {name!r} has unparsable numeric cell {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise IngestionError(f"{path}:{rowno}: column {name!r} has non-finite value {cell!r}")
                vals.append(v)
            cc = []
            for k, j in enumerate(cat_idx):
                cell = row[j].strip()
                if cell not in levels[k]:
                    levels[k].append(cell)
                cc.append(levels[k].index(cell))
            feats.append(vals)
            codes.append(cc)

    for name, lv in zip(cat_names, levels):
        if len(lv) < 2:
            raise IngestionError(f"{path}: categorical column {name!r} needs at least 2 values, saw {lv}")
    schema = replace(
        schema,
        attribute_levels=tuple(tuple(lv) for lv in levels[:-1]),
        label_levels=tuple(levels[-1]),
    )
    d, L = len(cont_idx), len(schema.attribute_names)
    F = np.asarray(feats, dtype=np.float64).reshape(-1, d)
    C = np.asarray(codes, dtype=np.int64).reshape(-1, L + 1)
    return Dataset(features=F, attributes=C[:, :L], labels=C[:, L], schema=schema)


# ---------------------------------------------------------------------------
# Standardization


@dataclass(frozen=True)
class ScalerParams:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if np.any(self.std <= 0):
            raise ValueError("scaler standard deviations must be positive")

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


def fit_scaler(ds: Dataset) -> ScalerParams:
    """Column means and *population* standard deviations (ddof=0)."""
    if ds.n < 2:
        raise ValueError("standardize needs at least 2 rows")
    mean = ds.features.mean(axis=0)
    std = ds.features.std(axis=0)
    for name, m, s in zip(ds.schema.continuous_names, mean, std):
        if not s > 1e-12 * max(1.0, abs(m)):
            raise ValueError(f"continuous column {name!r} is constant; cannot standardize")
    return ScalerParams(mean, std)


def standardize(ds: Dataset) -> tuple[Dataset, ScalerParams]:
    sp = fit_scaler(ds)
    return ds.with_features(sp.transform(ds.features)), sp


def destandardize(ds: Dataset, sp: ScalerParams) -> Dataset:
    if sp.mean.shape != (ds.d,):
        raise ValueError(f"scaler has {sp.mean.shape[0]} columns, dataset has {ds.d}")
    return ds.with_features(sp.inverse(ds.features))


# ---------------------------------------------------------------------------
# Group index map


@dataclass(frozen=True)
class GroupIndexMap:
    """Mixed-radix bijection between (label, attr_1..attr_L) tuples and ``0..G-1``.

    ``encode(u) = sum_i u_i * prod_{j<i} K_j`` with the empty product equal to 1,
    so the first component (the label) is the least significant digit.
    """

    cardinalities: tuple[int, ...]
    _place: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        card = tuple(int(k) for k in self.cardinalities)
        if not card or any(k < 2 for k in card):
            raise ValueError(f"every cardinality must be >= 2, got {card}")
        object.__setattr__(self, "cardinalities", card)
        place = [1]
        for k in card[:-1]:
            place.append(place[-1] * k)
        object.__setattr__(self, "_place", tuple(place))

    @classmethod
    def from_schema(cls, schema: ColumnSchema) -> "GroupIndexMap":
        return cls(schema.cardinalities)

    @property
    def group_count(self) -> int:
        return math.prod(self.cardinalities)

    def encode(self, tup: Sequence[int]) -> int:
        if len(tup) != len(self.cardinalities):
            raise ValueError(f"expected {len(self.cardinalities)} components, got {len(tup)}")
        gid = 0
        for u, k, p in zip(tup, self.cardinalities, self._place):
            u = int(u)
            if not 0 <= u < k:
                raise ValueError(f"component {u} out of range [0, {k})")
            gid += u * p
        return gid

    def decode(self, gid: int) -> tuple[int, ...]:
        gid = int(gid)
        if not 0 <= gid < self.group_count:
            raise ValueError(f"group id {gid} out of range [0, {self.group_count})")
        out = []
        for k in self.cardinalities:
            gid, r = divmod(gid, k)
            out.append(r)
        return tuple(out)

    def encode_rows(self, tuples: np.ndarray) -> np.ndarray:
        tuples = np.asarray(tuples, dtype=np.int64)
        card = np.asarray(self.cardinalities)
        if tuples.ndim != 2 or tuples.shape[1] != card.size:
            raise ValueError("tuple matrix has the wrong width")
        if np.any(tuples < 0) or np.any(tuples >= card):
            raise ValueError("tuple component out of range")
        return tuples @ np.asarray(self._place, dtype=np.int64)

    def group_ids(self, ds: Dataset) -> np.ndarray:
        return self.encode_rows(ds.group_tuples())


def encode_group(gmap: GroupIndexMap, tup: Sequence[int]) -> int:
    return gmap.encode(tup)


def decode_group(gmap: GroupIndexMap, gid: int) -> tuple[int, ...]:
    return gmap.decode(gid)


@dataclass(frozen=True)
class GroupStats:
    counts: np.ndarray
    proportions: np.ndarray
    majority: int

    @property
    def deficits(self) -> np.ndarray:
        return self.counts[self.majority] - self.counts


def group_stats(ds: Dataset, gmap: GroupIndexMap) -> GroupStats:
    if ds.n == 0:
        raise ValueError("group_stats needs a non-empty dataset")
    counts = np.bincount(gmap.group_ids(ds), minlength=gmap.group_count)
    # np.argmax returns the first maximum, which is the smallest-index tie-break.
    return GroupStats(counts=counts, proportions=counts / ds.n, majority=int(np.argmax(counts)))


# ---------------------------------------------------------------------------
# Resampling helpers


def make_imbalanced(ds: Dataset, attribute: str, minority_code: int, fraction: float, seed: int) -> Dataset:
    """Keep every non-minority row and a random floor(fraction * m) of the m minority rows."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    col = ds.schema.attribute_index(attribute)
    is_min = ds.attributes[:, col] == minority_code
    minority = np.flatnonzero(is_min)
    if minority.size == 0:
        raise ValueError(f"no rows carry code {minority_code} for attribute {attribute!r}")
    keep_m = int(math.floor(fraction * minority.size + 1e-9))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(minority, size=keep_m, replace=False)
    keep = np.sort(np.concatenate([np.flatnonzero(~is_min), chosen]))
    return ds.take(keep)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def train_test_split(
    ds: Dataset,
    test_fraction: float,
    seed: int,
    stratify_by: np.ndarray | None = None,
) -> tuple[Dataset, Dataset]:
    """Row order is preserved inside each part."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    if stratify_by is None:
        perm = rng.permutation(ds.n)
        test_idx = perm[: _round_half_up(test_fraction * ds.n)]
    else:
        strata = np.asarray(stratify_by)
        if strata.shape != (ds.n,):
            raise ValueError("stratify_by must have one entry per row")
        test_parts = []
        for g in np.unique(strata):
            members = np.flatnonzero(strata == g)
            if members.size < 2:
                raise ValueError(f"stratum {g} has {members.size} row(s); need at least 2 to split")
            k = _round_half_up(test_fraction * members.size)
            test_parts.append(rng.permutation(members)[:k])
        test_idx = np.concatenate(test_parts)
    in_test = np.zeros(ds.n, dtype=bool)
    in_test[test_idx] = True
    return ds.take(np.flatnonzero(~in_test)), ds.take(np.flatnonzero(in_test))
