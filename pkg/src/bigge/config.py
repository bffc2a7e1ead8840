"""Run configuration: a TOML file mapped onto frozen dataclasses.

Grammar (every table and key is optional; unknown keys are rejected)::

    seed = 0                    # master seed for every derived random stream
    precision = 64              # 32 or 64
    model = "bigg-e"            # "bigg-e" | "adj-lstm" | "er-baseline"

    [dataset]
    kind = "lobster"            # "er" | "tree" | "lobster" | "joint_tree"
    count = 200
    train_fraction = 0.8
    ordering = "as-given"       # or "bfs-from-max-degree"
    [dataset.params]            # keyword arguments of the generator
    backbone_range = [8, 16]

    [cells]                     # keyword arguments of the model config
    hidden = 64
    wt_hidden = 16

    [optimizer]                 # TrainConfig fields except epochs/batch_size
    lr = 1e-3
    plateau_epoch_topo = 40

    [train]
    epochs = 50
    batch_size = 32

    [eval]
    count = 100                 # graphs sampled by "sample" when --count is absent
    kinds = ["degree-hist", "weight-sample"]
    structure = "lobster"       # "tree" | "lobster" | omit

    [gradcheck]
    n = 6
    edge_prob = 0.5
    hidden = 8
    wt_hidden = 4
    tolerance = 1e-4
    coords = 64

    [bench]
    bigg_sizes = [512, 4096]
    adj_sizes = [128, 256]
    repeats = 3                 # timed runs per process
    rounds = 3                  # interleaved processes per cell; best time kept
    hidden = 32
    wt_hidden = 8
    adj_hidden = 16

    [paths]
    train = "data/train.jsonl"  # read instead of generating the dataset
    test = "data/test.jsonl"
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .datasets import GENERATORS
from .metrics import KINDS
from .training import TrainConfig

__all__ = [
    "ConfigError",
    "DatasetConfig",
    "EvalConfig",
    "GradcheckConfig",
    "BenchConfig",
    "RunConfig",
    "load_config",
    "parse_config",
]

MODELS = ("bigg-e", "adj-lstm", "er-baseline")
ORDERINGS = ("as-given", "bfs-from-max-degree")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "lobster"
    count: int = 200
    train_fraction: float = 0.8
    ordering: str = "as-given"
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EvalConfig:
    count: int = 100
    kinds: tuple[str, ...] = KINDS
    structure: str | None = None


@dataclass(frozen=True)
class GradcheckConfig:
    n: int = 6
    edge_prob: float = 0.5
    hidden: int = 8
    wt_hidden: int = 4
    tolerance: float = 1e-4
    coords: int = 64


@dataclass(frozen=True)
class BenchConfig:
    bigg_sizes: tuple[int, ...] = (512, 4096)
    adj_sizes: tuple[int, ...] = (128, 256)
    repeats: int = 3
    rounds: int = 3
    hidden: int = 32
    wt_hidden: int = 8
    adj_hidden: int = 16


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    precision: int = 64
    model: str = "bigg-e"
    dataset: DatasetConfig = DatasetConfig()
    cells: dict = field(default_factory=dict)
    optimizer: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()
    gradcheck: GradcheckConfig = GradcheckConfig()
    bench: BenchConfig = BenchConfig()
    paths: dict = field(default_factory=dict)


def _build(cls, table: Any, where: str, tuples: tuple[str, ...] = ()):
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(table) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    kw = {k: tuple(v) if k in tuples and isinstance(v, list) else v for k, v in table.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from exc


def parse_config(doc: dict) -> RunConfig:
    top = {"seed", "precision", "model", "dataset", "cells", "optimizer", "train", "eval",
           "gradcheck", "bench", "paths"}
    unknown = sorted(set(doc) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    precision = doc.get("precision", 64)
    if precision not in (32, 64):
        raise ConfigError("precision must be 32 or 64")
    model = doc.get("model", "bigg-e")
    if model not in MODELS:
        raise ConfigError(f"model must be one of {MODELS}")

    dataset = _build(DatasetConfig, doc.get("dataset", {}), "dataset")
    if dataset.kind not in GENERATORS:
        raise ConfigError(f"dataset.kind must be one of {tuple(GENERATORS)}")
    if dataset.ordering not in ORDERINGS:
        raise ConfigError(f"dataset.ordering must be one of {ORDERINGS}")
    if not 0.0 < dataset.train_fraction < 1.0:
        raise ConfigError("dataset.train_fraction must lie in (0, 1)")
    if dataset.count < 2:
        raise ConfigError("dataset.count must be at least 2")

    opt = dict(doc.get("optimizer", {}))
    train = doc.get("train", {})
    for key in train:
        if key not in ("epochs", "batch_size"):
            raise ConfigError(f"unknown key in [train]: {key}")
    if "epochs" in opt or "batch_size" in opt:
        raise ConfigError("epochs and batch_size belong in [train]")
    opt.update(train)
    optimizer = _build(TrainConfig, opt, "optimizer", ("betas",))
    if optimizer.epochs < 0 or optimizer.batch_size < 1:
        raise ConfigError("epochs must be >= 0 and batch_size >= 1")

    ev = _build(EvalConfig, doc.get("eval", {}), "eval", ("kinds",))
    bad = [k for k in ev.kinds if k not in KINDS]
    if bad:
        raise ConfigError(f"unknown statistic kind(s): {bad}")
    if ev.structure not in (None, "tree", "lobster"):
        raise ConfigError("eval.structure must be tree or lobster")

    cells = doc.get("cells", {})
    if not isinstance(cells, dict):
        raise ConfigError("[cells] must be a table")
    paths = doc.get("paths", {})
    if not isinstance(paths, dict) or not all(isinstance(v, str) for v in paths.values()):
        raise ConfigError("[paths] must map names to strings")
    return RunConfig(
        seed=seed,
        precision=precision,
        model=model,
        dataset=dataset,
        cells=dict(cells),
        optimizer=optimizer,
        eval=ev,
        gradcheck=_build(GradcheckConfig, doc.get("gradcheck", {}), "gradcheck"),
        bench=_build(BenchConfig, doc.get("bench", {}), "bench", ("bigg_sizes", "adj_sizes")),
        paths=dict(paths),
    )


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc)
