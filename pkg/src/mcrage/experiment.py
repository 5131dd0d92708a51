"""Four-arm comparison: Imbalanced, SMOTE-treated, MCRAGE-treated and Balanced training sets."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffusion
from .denoiser import TrainConfig
from .evaluation import EvalReport, feature_distribution_distance, fit_forest, pca_project, per_group_report
from .forest import ForestConfig
from .io import derive_seed
from .rebalance import MCRAGEResult, RebalancePlan, make_f1_probe, mcrage, smote, undersample_balance
from .schema import Dataset, GroupIndexMap, ScalerParams, destandardize, make_imbalanced, standardize, train_test_split

log = logging.getLogger(__name__)

ARMS = ("Imbalanced", "SMOTE", "MCRAGE", "Balanced")


@dataclass(frozen=True)
class ScheduleSpec:
    beta_start: float = diffusion.DEFAULT_BETA_START
    beta_end: float | None = None
    T_prime: int | None = None
    paper_variance: bool = False

    def build(self, features: np.ndarray) -> diffusion.NoiseSchedule:
        diam = diffusion.dataset_diameter(features)
        return diffusion.default_schedule(diam, self.beta_start, self.beta_end, self.T_prime)


@dataclass(frozen=True)
class ExperimentConfig:
    attribute: str
    minority_code: int
    fraction: float = 0.1
    test_fraction: float = 0.2
    undersample: bool = True
    train: TrainConfig = TrainConfig()
    schedule: ScheduleSpec = ScheduleSpec()
    guidance: diffusion.GuidanceConfig = diffusion.GuidanceConfig()
    forest: ForestConfig = ForestConfig()
    probe: bool = True
    probe_trees: int = 25
    smote_k: int = 5
    positive: int = 1
    shared_forest_seed: bool = False
    seed: int = 0


@dataclass
class ExperimentResult:
    reports: dict[str, EvalReport]
    arms: dict[str, Dataset]  # training sets in original units
    test: Dataset
    gmap: GroupIndexMap
    scaler: ScalerParams
    mcrage: MCRAGEResult
    distances: dict[tuple[int, str], object] = field(default_factory=dict)
    projection: tuple[np.ndarray, np.ndarray] | None = None

    def table(self) -> list[dict]:
        """One row per arm, ordered as ARMS: accuracy in percent, F1, AUROC."""
        return [
            {
                "arm": arm,
                "accuracy_pct": 100.0 * self.reports[arm].accuracy,
                "f1": self.reports[arm].f1,
                "auroc": self.reports[arm].auroc,
            }
            for arm in ARMS
        ]


def run_experiment(ds: Dataset, cfg: ExperimentConfig) -> ExperimentResult:
    s = cfg.seed
    gmap = GroupIndexMap.from_schema(ds.schema)
    balanced = undersample_balance(ds, cfg.attribute, derive_seed(s, "undersample")) if cfg.undersample else ds
    train_set, test = train_test_split(
        balanced, cfg.test_fraction, derive_seed(s, "split"), stratify_by=gmap.group_ids(balanced)
    )
    imbalanced = make_imbalanced(train_set, cfg.attribute, cfg.minority_code, cfg.fraction, derive_seed(s, "imbalance"))
    z, scaler = standardize(imbalanced)
    z_gids = gmap.group_ids(z)
    plan = RebalancePlan.from_dataset(z, gmap)
    log.info("imbalanced training set: %d rows, %d synthetic needed", z.n, plan.total)

    sm = smote(z, z_gids, cfg.smote_k, plan, derive_seed(s, "smote"))

    sched = cfg.schedule.build(z.features)
    tcfg = replace(cfg.train, seed=derive_seed(s, "train"))
    probe = None
    if cfg.probe:
        probe = make_f1_probe(
            z,
            gmap,
            sched,
            validation_fraction=tcfg.validation_fraction,
            forest_cfg=replace(cfg.forest, tree_count=cfg.probe_trees, seed=derive_seed(s, "probe-forest")),
            guidance=cfg.guidance,
            seed=derive_seed(s, "probe"),
            positive=cfg.positive,
            paper_variance=cfg.schedule.paper_variance,
        )
    mc = mcrage(
        z, gmap, sched, tcfg, guidance=cfg.guidance, seed=derive_seed(s, "mcrage-sample"), probe=probe,
        paper_variance=cfg.schedule.paper_variance,
    )

    arms = {
        "Imbalanced": imbalanced,
        "SMOTE": destandardize(sm.dataset, scaler),
        "MCRAGE": destandardize(mc.dataset, scaler),
        "Balanced": train_set,
    }
    reports = {}
    for arm in ARMS:
        fseed = derive_seed(s, "forest") if cfg.shared_forest_seed else derive_seed(s, f"forest-{arm}")
        forest = fit_forest(arms[arm], replace(cfg.forest, seed=fseed))
        reports[arm] = per_group_report(forest, test, gmap, cfg.positive)
        log.info("%-10s acc %.4f f1 %.4f", arm, reports[arm].accuracy, reports[arm].f1)

    # Synthetic minority rows against the real rows of the same group.
    distances = {}
    real_gids = gmap.group_ids(train_set)
    mc_ds = arms["MCRAGE"]
    mc_gids = gmap.group_ids(mc_ds)
    for gid in np.flatnonzero(plan.deficits > 0):
        real = train_set.features[real_gids == gid]
        syn = mc_ds.features[(mc_gids == gid) & mc_ds.synthetic_flags()]
        if real.shape[0] == 0 or syn.shape[0] == 0:
            continue
        for j, name in enumerate(ds.schema.continuous_names):
            distances[(int(gid), name)] = feature_distribution_distance(real[:, j], syn[:, j])

    projection = pca_project(mc.dataset.features) if mc.dataset.n >= 3 else None
    return ExperimentResult(reports, arms, test, gmap, scaler, mc, distances, projection)
