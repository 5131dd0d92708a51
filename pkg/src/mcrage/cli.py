"""``mcrage rebalance|experiment|sample|eval --config <path> [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 a pipeline stage failed, 2 invalid configuration or usage.
Log verbosity comes from the ``MCRAGE_LOG_LEVEL`` environment variable.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import diffusion
from .config import ConfigError, RunConfig, load_config
from .denoiser import load_checkpoint, save_checkpoint
from .evaluation import fit_forest, per_group_report
from .experiment import ARMS, ExperimentConfig, run_experiment
from .io import derive_seed, write_dataset, write_json, write_rows
from .rebalance import make_f1_probe, mcrage, synthetic_rows
from .schema import ColumnSchema, Dataset, GroupIndexMap, ScalerParams, group_stats, load_csv, standardize

log = logging.getLogger("mcrage")


class StageError(RuntimeError):
    def __init__(self, stage: str, err: BaseException):
        super().__init__(f"stage {stage!r} failed: {err}")
        self.stage = stage


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, (StageError, ConfigError)):
            raise StageError(self.name, exc) from exc
        return False


def _positive_code(cfg: RunConfig, schema: ColumnSchema) -> int:
    if cfg.positive_label is None:
        return 1
    if cfg.positive_label not in schema.label_levels:
        raise ConfigError(f"positive_label {cfg.positive_label!r} not among {list(schema.label_levels)}")
    return schema.label_levels.index(cfg.positive_label)


def _load_data(cfg: RunConfig, path=None) -> Dataset:
    path = path or cfg.data_path
    if path is None:
        raise ConfigError("[data] path is required")
    with _Stage("load"):
        return load_csv(path, cfg.schema)


def _counts_table(ds: Dataset, gmap: GroupIndexMap) -> list[dict]:
    counts = group_stats(ds, gmap).counts
    return [{"group": g, "tuple": list(gmap.decode(g)), "count": int(c)} for g, c in enumerate(counts)]


def _model_meta(schema: ColumnSchema, scaler: ScalerParams, paper_variance: bool) -> dict:
    return {"schema": schema.to_dict(), "scaler": scaler.to_dict(), "paper_variance": paper_variance}


def _write_training(out: Path, training) -> None:
    if training is None:
        return
    write_rows(out / "curves.csv", ["epoch", "loss"], ((i + 1, v) for i, v in enumerate(training.losses)))
    write_rows(out / "probes.csv", ["epoch", "f1"], training.probes)


def cmd_rebalance(cfg: RunConfig) -> dict:
    out = cfg.out_dir
    ds = _load_data(cfg)
    with _Stage("standardize"):
        z, scaler = standardize(ds)
        gmap = GroupIndexMap.from_schema(ds.schema)
    with _Stage("schedule"):
        sched = cfg.schedule.build(z.features)
    tcfg = replace(cfg.train, seed=derive_seed(cfg.seed, "train"))
    probe = None
    if cfg.probe:
        probe = make_f1_probe(
            z, gmap, sched, tcfg.validation_fraction,
            replace(cfg.forest, tree_count=cfg.probe_trees, seed=derive_seed(cfg.seed, "probe-forest")),
            cfg.guidance, derive_seed(cfg.seed, "probe"), _positive_code(cfg, ds.schema),
            cfg.schedule.paper_variance,
        )
    with _Stage("mcrage"):
        res = mcrage(z, gmap, sched, tcfg, guidance=cfg.guidance, seed=derive_seed(cfg.seed, "mcrage-sample"),
                     probe=probe, paper_variance=cfg.schedule.paper_variance)
    with _Stage("write"):
        write_dataset(out / "augmented.csv", res.dataset, scaler, with_flag=True)
        save_checkpoint(out / "checkpoint.bin", res.checkpoint, sched)
        write_json(out / "checkpoint.json", _model_meta(ds.schema, scaler, cfg.schedule.paper_variance))
        _write_training(out, res.training)
        manifest = {
            "seed": cfg.seed,
            "rows_in": ds.n,
            "rows_out": res.dataset.n,
            "synthetic_rows": res.plan.total,
            "majority_group": res.plan.majority,
            "deficits": res.plan.deficits.tolist(),
            "counts_before": _counts_table(ds, gmap),
            "counts_after": _counts_table(res.dataset, gmap),
            "empty_groups": res.empty_groups,
            "T_prime": sched.T_prime,
            "beta_start": float(sched.beta[0]),
            "beta_end": sched.beta_bar,
            "checkpoint_epoch": res.checkpoint.epoch,
            "checkpoint_f1": res.checkpoint.f1,
        }
        write_json(out / "manifest.json", manifest)
    return manifest


def cmd_experiment(cfg: RunConfig) -> dict:
    if cfg.imbalance is None:
        raise ConfigError("[imbalance] section is required for the experiment")
    out = cfg.out_dir
    ds = _load_data(cfg)
    try:
        minority = ds.schema.attribute_code(cfg.imbalance.attribute, cfg.imbalance.minority)
    except KeyError as err:
        raise ConfigError(f"[imbalance] {err}") from None
    ecfg = ExperimentConfig(
        attribute=cfg.imbalance.attribute,
        minority_code=minority,
        fraction=cfg.imbalance.fraction,
        test_fraction=cfg.test_fraction,
        undersample=cfg.undersample,
        train=cfg.train,
        schedule=cfg.schedule,
        guidance=cfg.guidance,
        forest=cfg.forest,
        probe=cfg.probe,
        probe_trees=cfg.probe_trees,
        smote_k=cfg.smote_k,
        positive=_positive_code(cfg, ds.schema),
        shared_forest_seed=cfg.shared_forest_seed,
        seed=cfg.seed,
    )
    with _Stage("experiment"):
        res = run_experiment(ds, ecfg)
    with _Stage("write"):
        table = res.table()
        write_rows(out / "table.csv", ["arm", "accuracy_pct", "f1", "auroc"],
                   ([r["arm"], r["accuracy_pct"], r["f1"], "" if r["auroc"] is None else r["auroc"]] for r in table))
        pg_rows = []
        for arm in ARMS:
            for g, m in sorted(res.reports[arm].per_group.items()):
                pg_rows.append([arm, g, *res.gmap.decode(g), m.support, m.accuracy, m.f1])
        tuple_cols = [ds.schema.label_name, *ds.schema.attribute_names]
        write_rows(out / "per_group.csv", ["arm", "group", *tuple_cols, "support", "accuracy", "f1"], pg_rows)
        w1_rows = []
        for (g, name), dc in sorted(res.distances.items()):
            w1_rows.append([g, name, dc.w1])
            write_rows(out / "distributions" / f"group{g}_{name}.csv",
                       ["bin_lo", "bin_hi", "real_density", "synthetic_density"], dc.rows())
        write_rows(out / "w1.csv", ["group", "feature", "w1"], w1_rows)
        if res.projection is not None:
            coords, var = res.projection
            mc = res.mcrage.dataset
            gids = res.gmap.group_ids(mc)
            write_rows(out / "projection.csv", ["pc1", "pc2", "group", "synthetic"],
                       ([coords[i, 0], coords[i, 1], gids[i], int(mc.synthetic_flags()[i])] for i in range(mc.n)))
        _write_training(out, res.mcrage.training)
        sched = res.mcrage.schedule
        report = {
            "seed": cfg.seed,
            "table": table,
            "arms": {arm: res.reports[arm].to_dict(res.gmap) for arm in ARMS},
            "train_rows": {arm: res.arms[arm].n for arm in ARMS},
            "test_rows": res.test.n,
            "T_prime": sched.T_prime,
            "beta_end": sched.beta_bar,
            "checkpoint_epoch": res.mcrage.checkpoint.epoch,
            "checkpoint_f1": res.mcrage.checkpoint.f1,
            "w1": {f"{g}/{name}": dc.w1 for (g, name), dc in sorted(res.distances.items())},
            "pca_explained_variance": None if res.projection is None else res.projection[1].tolist(),
        }
        write_json(out / "report.json", report)
    return report


def cmd_sample(cfg: RunConfig, checkpoint: Path, class_id: int, count: int, seed: int, output: Path) -> None:
    with _Stage("load-checkpoint"):
        ckpt, sched = load_checkpoint(checkpoint)
        meta = json.loads(Path(checkpoint).with_suffix(".json").read_text())
        model_schema = ColumnSchema.from_dict(meta["schema"])
        scaler = ScalerParams.from_dict(meta["scaler"])
    with _Stage("check-schema"):
        if (model_schema.continuous_names != cfg.schema.continuous_names
                or model_schema.attribute_names != cfg.schema.attribute_names
                or model_schema.label_name != cfg.schema.label_name):
            raise ValueError("checkpoint schema does not match the configured columns")
        gmap = GroupIndexMap.from_schema(model_schema)
        if ckpt.params.d != len(model_schema.continuous_names) or ckpt.params.G != gmap.group_count:
            raise ValueError(f"checkpoint dims (d={ckpt.params.d}, G={ckpt.params.G}) do not match the schema")
    with _Stage("sample"):
        feats = diffusion.sample(ckpt.params, sched, class_id, count, cfg.guidance, seed,
                                 paper_variance=bool(meta.get("paper_variance", False)))
        empty = Dataset(np.zeros((0, ckpt.params.d)), np.zeros((0, len(model_schema.attribute_names))),
                        np.zeros(0), model_schema)
        rows = synthetic_rows(empty, gmap, class_id, feats)
    with _Stage("write"):
        write_dataset(output, rows, scaler, with_flag=False)


def cmd_eval(cfg: RunConfig, train_path, test_path, output_dir: Path) -> dict:
    train = _load_data(cfg, train_path)
    # Reuse the training levels so codes agree between the two files.
    test_schema = train.schema
    with _Stage("load-test"):
        test = load_csv(test_path, test_schema)
        if test.schema != train.schema:
            raise ValueError("test file introduces category values unseen in training")
    gmap = GroupIndexMap.from_schema(train.schema)
    with _Stage("fit"):
        forest = fit_forest(train, replace(cfg.forest, seed=derive_seed(cfg.seed, "forest-eval")))
        report = per_group_report(forest, test, gmap, _positive_code(cfg, train.schema))
    with _Stage("write"):
        doc = report.to_dict(gmap)
        write_json(output_dir / "eval_report.json", doc)
    return doc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcrage", description="Rebalance tabular data with a conditional diffusion model.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, type=Path, help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out", type=Path, help="output directory (overrides the config)")
        sp.add_argument("--epochs", type=int, help="training epochs (overrides the config)")
        sp.add_argument("--positive-label", help="label value scored as positive by F1/AUROC")
        return sp

    common(sub.add_parser("rebalance", help="augment a dataset to equal group counts"))
    common(sub.add_parser("experiment", help="run the four-arm comparison"))
    sp = common(sub.add_parser("sample", help="draw synthetic rows from a saved checkpoint"))
    sp.add_argument("--checkpoint", type=Path)
    sp.add_argument("--class-id", type=int)
    sp.add_argument("--count", type=int)
    sp.add_argument("--output", type=Path, help="CSV path (default <out>/samples.csv)")
    sp = common(sub.add_parser("eval", help="fit a forest on one CSV and evaluate it on another"))
    sp.add_argument("--train", type=Path)
    sp.add_argument("--test", type=Path)
    return p


def _setup_logging() -> None:
    level = os.environ.get("MCRAGE_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out_dir"] = args.out
        if args.epochs is not None:
            overrides["train"] = replace(cfg.train, epochs=args.epochs)
        if args.positive_label is not None:
            overrides["positive_label"] = args.positive_label
        cfg = replace(cfg, **overrides)

        if args.command == "rebalance":
            m = cmd_rebalance(cfg)
            print(f"wrote {cfg.out_dir / 'augmented.csv'} ({m['synthetic_rows']} synthetic rows)")
        elif args.command == "experiment":
            rep = cmd_experiment(cfg)
            print(f"{'arm':<11}{'acc %':>9}{'F1':>9}{'AUROC':>8}")
            for r in rep["table"]:
                auc = "n/a" if r["auroc"] is None else f"{r['auroc']:.2f}"
                print(f"{r['arm']:<11}{r['accuracy_pct']:>9.3f}{r['f1']:>9.5f}{auc:>8}")
        elif args.command == "sample":
            s = cfg.extra.get("sample", {})
            ckpt = args.checkpoint or s.get("checkpoint")
            class_id = args.class_id if args.class_id is not None else s.get("class_id")
            count = args.count if args.count is not None else s.get("count")
            if ckpt is None or class_id is None or count is None:
                raise ConfigError("sample needs checkpoint, class id and count")
            output = args.output or cfg.out_dir / "samples.csv"
            cmd_sample(cfg, Path(ckpt), int(class_id), int(count), cfg.seed, output)
            print(f"wrote {output}")
        elif args.command == "eval":
            e = cfg.extra.get("eval", {})
            train_path = args.train or e.get("train")
            test_path = args.test or e.get("test")
            if train_path is None or test_path is None:
                raise ConfigError("eval needs train and test CSV paths")
            doc = cmd_eval(cfg, Path(train_path), Path(test_path), cfg.out_dir)
            print(json.dumps({k: doc[k] for k in ("accuracy", "f1", "auroc")}))
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except StageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
