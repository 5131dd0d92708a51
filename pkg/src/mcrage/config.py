"""Run configuration: one YAML file, validated into dataclasses."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .denoiser import TrainConfig
from .diffusion import GuidanceConfig
from .experiment import ScheduleSpec
from .forest import ForestConfig
from .schema import ColumnSchema


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ImbalanceSpec:
    attribute: str
    minority: str
    fraction: float = 0.1


@dataclass(frozen=True)
class RunConfig:
    data_path: Path | None
    schema: ColumnSchema
    imbalance: ImbalanceSpec | None = None
    test_fraction: float = 0.2
    undersample: bool = True
    schedule: ScheduleSpec = ScheduleSpec()
    train: TrainConfig = TrainConfig()
    guidance: GuidanceConfig = GuidanceConfig()
    forest: ForestConfig = ForestConfig()
    probe: bool = True
    probe_trees: int = 25
    smote_k: int = 5
    positive_label: str | None = None
    shared_forest_seed: bool = False
    out_dir: Path = Path("runs/default")
    seed: int = 0
    extra: dict = field(default_factory=dict)


def _build(cls, raw, section: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"[{section}] must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"[{section}] unknown key(s): {sorted(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"[{section}] {err}") from None


_PATH_KEYS = {"sample": ("checkpoint",), "eval": ("train", "test")}


def _resolve_paths(section, base: Path, name: str) -> dict:
    if section is None:
        return {}
    if not isinstance(section, dict):
        raise ConfigError(f"[{name}] must be a mapping")
    out = dict(section)
    for key in _PATH_KEYS[name]:
        if out.get(key) is not None:
            out[key] = base / out[key]
    return out


def parse_config(raw: dict, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    known = {
        "data", "imbalance", "split", "schedule", "train", "guidance", "forest", "probe",
        "smote", "out", "seed", "sample", "eval", "shared_forest_seed",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    data = raw.get("data") or {}
    try:
        schema = ColumnSchema(
            continuous_names=tuple(data["continuous"]),
            attribute_names=tuple(data.get("attributes", ())),
            label_name=data["label"],
        )
    except KeyError as err:
        raise ConfigError(f"[data] missing {err}") from None
    except ValueError as err:
        raise ConfigError(f"[data] {err}") from None
    base = base_dir or Path(".")
    path = data.get("path")
    data_path = (base / path) if path is not None else None

    imb = None
    if raw.get("imbalance") is not None:
        imb = _build(ImbalanceSpec, {**raw["imbalance"], "minority": str(raw["imbalance"].get("minority"))}, "imbalance")
        if imb.attribute not in schema.attribute_names:
            raise ConfigError(f"[imbalance] attribute {imb.attribute!r} is not a declared attribute")
        if not 0 < imb.fraction <= 1:
            raise ConfigError("[imbalance] fraction must lie in (0, 1]")
    split = raw.get("split") or {}
    test_fraction = float(split.get("test_fraction", 0.2))
    if not 0 < test_fraction < 1:
        raise ConfigError("[split] test_fraction must lie in (0, 1)")
    probe = raw.get("probe") or {}
    smote = raw.get("smote") or {}
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    return RunConfig(
        data_path=data_path,
        schema=schema,
        imbalance=imb,
        test_fraction=test_fraction,
        undersample=bool(split.get("undersample", True)),
        schedule=_build(ScheduleSpec, raw.get("schedule"), "schedule"),
        train=_build(TrainConfig, raw.get("train"), "train"),
        guidance=_build(GuidanceConfig, raw.get("guidance"), "guidance"),
        forest=_build(ForestConfig, raw.get("forest"), "forest"),
        probe=bool(probe.get("enabled", True)),
        probe_trees=int(probe.get("tree_count", 25)),
        smote_k=int(smote.get("k", 5)),
        positive_label=None if data.get("positive_label") is None else str(data["positive_label"]),
        shared_forest_seed=bool(raw.get("shared_forest_seed", False)),
        out_dir=base / raw.get("out", "runs/default"),
        seed=seed,
        extra={k: _resolve_paths(raw.get(k), base, k) for k in ("sample", "eval")},
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: {err}") from None
    return parse_config(raw or {}, base_dir=path.parent)
