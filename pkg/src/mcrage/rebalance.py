"""Group rebalancing: diffusion-based oversampling (MCRAGE), SMOTE and undersampling."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import diffusion
from .denoiser import Checkpoint, DenoiserParams, TrainConfig, TrainResult, train
from .evaluation import f1, fit_forest, predictors
from .forest import ForestConfig
from .io import derive_seed
from .schema import Dataset, GroupIndexMap, concat, group_stats, train_test_split

log = logging.getLogger(__name__)


class EmptyGroupWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RebalancePlan:
    deficits: np.ndarray
    majority: int

    def __post_init__(self):
        d = np.asarray(self.deficits, dtype=np.int64)
        object.__setattr__(self, "deficits", d)
        if np.any(d < 0) or d[self.majority] != 0:
            raise ValueError("deficits must be >= 0 and zero for the majority group")

    @property
    def total(self) -> int:
        return int(self.deficits.sum())

    @classmethod
    def from_counts(cls, counts) -> "RebalancePlan":
        counts = np.asarray(counts, dtype=np.int64)
        k = int(np.argmax(counts))
        return cls(counts[k] - counts, k)

    @classmethod
    def from_dataset(cls, ds: Dataset, gmap: GroupIndexMap) -> "RebalancePlan":
        st = group_stats(ds, gmap)
        return cls(st.deficits, st.majority)


def synthetic_rows(ds: Dataset, gmap: GroupIndexMap, gid: int, features: np.ndarray) -> Dataset:
    """Rows for group ``gid`` with label/attribute columns decoded from the id."""
    y, *attrs = gmap.decode(gid)
    n = features.shape[0]
    return Dataset(
        features=features.reshape(n, ds.d),
        attributes=np.tile(np.asarray(attrs, dtype=np.int64), (n, 1)).reshape(n, len(attrs)),
        labels=np.full(n, y, dtype=np.int64),
        schema=ds.schema,
        synthetic=np.ones(n, dtype=bool),
    )


def _with_flag(ds: Dataset) -> Dataset:
    return Dataset(ds.features, ds.attributes, ds.labels, ds.schema, ds.synthetic_flags())


def generate_deficits(
    params: DenoiserParams,
    sched: diffusion.NoiseSchedule,
    ds: Dataset,
    gmap: GroupIndexMap,
    plan: RebalancePlan,
    guidance: diffusion.GuidanceConfig,
    seed: int,
    paper_variance: bool = False,
) -> list[Dataset]:
    parts = []
    for gid in range(gmap.group_count):
        k = int(plan.deficits[gid])
        if k == 0:
            continue
        feats = diffusion.sample(
            params, sched, gid, k, guidance, seed=derive_seed(seed, f"group-{gid}"), paper_variance=paper_variance
        )
        parts.append(synthetic_rows(ds, gmap, gid, feats))
    return parts


@dataclass
class MCRAGEResult:
    dataset: Dataset  # originals first, then synthetic rows ordered by group id
    plan: RebalancePlan
    schedule: diffusion.NoiseSchedule
    checkpoint: Checkpoint
    training: TrainResult | None = None
    empty_groups: list[int] = field(default_factory=list)


def mcrage(
    ds: Dataset,
    gmap: GroupIndexMap,
    sched: diffusion.NoiseSchedule | None = None,
    cfg: TrainConfig | None = None,
    checkpoint: Checkpoint | None = None,
    guidance: diffusion.GuidanceConfig = diffusion.GuidanceConfig(),
    seed: int = 0,
    probe=None,
    paper_variance: bool = False,
) -> MCRAGEResult:
    """Oversample every group up to the majority count with a conditional diffusion model.

    ``ds`` must already be standardized. Either ``cfg`` (train a model) or
    ``checkpoint`` (reuse one) is required; a checkpoint needs its schedule in ``sched``.
    """
    gids = gmap.group_ids(ds)
    stats = group_stats(ds, gmap)
    plan = RebalancePlan(stats.deficits, stats.majority)
    empty = [int(g) for g in np.flatnonzero(stats.counts == 0)]
    if empty:
        msg = (
            f"groups {empty} have no observed rows; their samples come from an untrained "
            "class embedding and should not be trusted"
        )
        warnings.warn(msg, EmptyGroupWarning, stacklevel=2)
        log.warning(msg)

    result_training = None
    if checkpoint is None:
        if cfg is None:
            raise ValueError("need a TrainConfig or a Checkpoint")
        if sched is None:
            sched = diffusion.default_schedule(diffusion.dataset_diameter(ds.features))
        result_training = train(ds.features, gids, gmap.group_count, sched, cfg, probe)
        checkpoint = result_training.best
    else:
        p = checkpoint.params
        if p.d != ds.d or p.G != gmap.group_count:
            raise ValueError(f"checkpoint is for d={p.d}, G={p.G}; data has d={ds.d}, G={gmap.group_count}")
        if sched is None:
            raise ValueError("a checkpoint needs its noise schedule")

    parts = generate_deficits(checkpoint.params, sched, ds, gmap, plan, guidance, seed, paper_variance)
    out = concat([_with_flag(ds), *parts])
    return MCRAGEResult(out, plan, sched, checkpoint, result_training, empty)


def make_f1_probe(
    ds: Dataset,
    gmap: GroupIndexMap,
    sched: diffusion.NoiseSchedule,
    validation_fraction: float = 0.1,
    forest_cfg: ForestConfig = ForestConfig(tree_count=25),
    guidance: diffusion.GuidanceConfig = diffusion.GuidanceConfig(),
    seed: int = 0,
    positive: int = 1,
    paper_variance: bool = False,
):
    """Checkpoint scorer: rebalance a held-out-free part of ``ds`` with the current model,
    fit a forest on it and return F1 on a stratified validation split."""
    gids = gmap.group_ids(ds)
    counts = np.bincount(gids, minlength=gmap.group_count)
    strata = gids if np.all(counts[counts > 0] >= 2) else None
    fit_part, val_part = train_test_split(ds, validation_fraction, derive_seed(seed, "probe-split"), strata)
    plan = RebalancePlan.from_dataset(fit_part, gmap)

    def probe(params: DenoiserParams, epoch: int) -> float:
        parts = generate_deficits(
            params, sched, fit_part, gmap, plan, guidance, derive_seed(seed, f"probe-{epoch}"), paper_variance
        )
        aug = concat([fit_part, *parts]) if parts else fit_part
        forest = fit_forest(aug, forest_cfg)
        preds = forest.predict(predictors(val_part))
        return f1(val_part.labels, preds, positive)

    return probe


# ---------------------------------------------------------------------------
# Baselines


@dataclass
class SmoteResult:
    dataset: Dataset
    base: np.ndarray  # row index (into the input) of each synthetic row's base point
    neighbor: np.ndarray  # row index of the chosen neighbour
    lam: np.ndarray  # interpolation weight in [0, 1]


def smote(ds: Dataset, group_ids, k: int, plan: RebalancePlan, seed: int) -> SmoteResult:
    """SMOTE within each group: base + lam * (neighbour - base) on the (standardized) features."""
    if k < 1:
        raise ValueError("k must be >= 1")
    gids = np.asarray(group_ids, dtype=np.int64)
    rng = np.random.default_rng(seed)
    parts, bases, nbrs, lams = [], [], [], []
    for gid in range(plan.deficits.size):
        need = int(plan.deficits[gid])
        if need == 0:
            continue
        members = np.flatnonzero(gids == gid)
        if members.size < 2:
            raise ValueError(f"group {gid} has {members.size} row(s); SMOTE needs at least 2")
        kk = min(k, members.size - 1)
        pts = ds.features[members]
        _, nn = cKDTree(pts).query(pts, k=kk + 1)
        nn = np.asarray(nn).reshape(members.size, kk + 1)
        neigh = np.empty((members.size, kk), dtype=np.int64)
        for i in range(members.size):
            row = [j for j in nn[i] if j != i][:kk]
            neigh[i] = row
        b = rng.integers(0, members.size, need)
        j = neigh[b, rng.integers(0, kk, need)]
        lam = rng.random(need)
        x = pts[b] + lam[:, None] * (pts[j] - pts[b])
        y, *attrs = _decode_from_rows(ds, members[0])
        parts.append(
            Dataset(
                x,
                np.tile(np.asarray(attrs, dtype=np.int64), (need, 1)).reshape(need, ds.attributes.shape[1]),
                np.full(need, y),
                ds.schema,
                np.ones(need, dtype=bool),
            )
        )
        bases.append(members[b])
        nbrs.append(members[j])
        lams.append(lam)
    out = concat([_with_flag(ds), *parts])
    cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dtype=dt)  # noqa: E731
    return SmoteResult(out, cat(bases, np.int64), cat(nbrs, np.int64), cat(lams, np.float64))


def _decode_from_rows(ds: Dataset, row: int) -> tuple[int, ...]:
    return (int(ds.labels[row]), *(int(a) for a in ds.attributes[row]))


def undersample_balance(ds: Dataset, attribute: str, seed: int) -> Dataset:
    """Randomly drop rows until every observed value of ``attribute`` has the minimum count."""
    col = ds.attributes[:, ds.schema.attribute_index(attribute)]
    values, counts = np.unique(col, return_counts=True)
    target = counts.min()
    rng = np.random.default_rng(seed)
    keep = [rng.choice(np.flatnonzero(col == v), size=target, replace=False) for v in values]
    return ds.take(np.sort(np.concatenate(keep)))
