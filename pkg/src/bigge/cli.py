"""Command-line entry point: ``bigge {generate,train,sample,eval,gradcheck,bench}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O
error. Failures print one JSON object ``{"error", "message", "exit_code"}``
on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .bench import run_bench
from .config import ConfigError, RunConfig, load_config
from .datasets import GENERATORS, ErBaseline, NodeCountModel, er_baseline, fit_node_count, sample_n, stream_rng
from .graph import GraphFormatError, GraphValidationError, WeightedGraph, canonicalize, read_graphs, write_graphs
from .metrics import evaluate
from .nn import CheckpointError, NonFiniteGradientError, grad_check, load_checkpoint, save_checkpoint
from .plotting import plot_bench, plot_eval, plot_training
from .training import Trainer, load_model, make_model, save_model

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_CONFIG", "EXIT_NUMERIC", "EXIT_IO"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class NumericalFailure(FloatingPointError):
    pass


def _dtype(cfg: RunConfig) -> torch.dtype:
    return torch.float64 if cfg.precision == 64 else torch.float32


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- data

def generate_dataset(cfg: RunConfig) -> tuple[list[WeightedGraph], list[WeightedGraph]]:
    ds = cfg.dataset
    try:
        graphs = GENERATORS[ds.kind](ds.count, rng=stream_rng(cfg.seed, "data"), **ds.params)
    except TypeError as exc:
        raise ConfigError(f"[dataset.params]: {exc}") from exc
    graphs = [canonicalize(g, ds.ordering) for g in graphs]
    order = stream_rng(cfg.seed, "split").permutation(len(graphs))
    cut = min(max(int(round(ds.train_fraction * len(graphs))), 1), len(graphs) - 1)
    return [graphs[i] for i in order[:cut]], [graphs[i] for i in order[cut:]]


def _train_graphs(cfg: RunConfig) -> list[WeightedGraph]:
    if "train" in cfg.paths:
        return [canonicalize(g, cfg.dataset.ordering) for g in read_graphs(cfg.paths["train"])]
    return generate_dataset(cfg)[0]


def _node_counts_header(graphs: Sequence[WeightedGraph]) -> dict:
    nc = fit_node_count(graphs)
    return {"support": list(nc.support), "probs": list(nc.probs)}


# ---------------------------------------------------------------- commands

def cmd_generate(cfg: RunConfig, out: Path, args) -> dict:
    train, test = generate_dataset(cfg)
    write_graphs(train, out / "train.jsonl")
    write_graphs(test, out / "test.jsonl")
    ds = cfg.dataset
    record = {"kind": ds.kind, "count": ds.count, "train": len(train), "test": len(test), "seed": cfg.seed,
              "ordering": ds.ordering, "params": ds.params,
              "params_note": "generator arguments not listed in params take the library defaults"}
    _write_json(out / "dataset.json", record)
    return record


def _save_baseline(path: Path, base: ErBaseline, cfg: RunConfig) -> None:
    header = {"model": "er-baseline", "p_hat": base.p_hat, "seed": cfg.seed,
              "node_counts": {"support": list(base.sizes.support), "probs": list(base.sizes.probs)}}
    save_checkpoint(path, header, {"pool": np.asarray(base.pool, dtype=np.float64)})


def cmd_train(cfg: RunConfig, out: Path, args) -> dict:
    graphs = _train_graphs(cfg)
    ckpt_out = out / "model.ckpt"
    if cfg.model == "er-baseline":
        base = er_baseline(graphs)
        _save_baseline(ckpt_out, base, cfg)
        return {"model": "er-baseline", "p_hat": base.p_hat, "checkpoint": str(ckpt_out)}
    log_path = out / "metrics.jsonl"
    if args.checkpoint:
        model, header = load_model(args.checkpoint, _dtype(cfg))
        if header["model"] != cfg.model:
            raise ConfigError(f"checkpoint holds a {header['model']} model, config asks for {cfg.model}")
        trainer = Trainer(model, graphs, cfg.optimizer, seed=cfg.seed, log_path=log_path)
        trainer.epoch = int(header.get("epoch", 0))
    else:
        model = make_model(cfg.model, cfg.cells, graphs, seed=cfg.seed, dtype=_dtype(cfg))
        if log_path.exists():
            log_path.unlink()
        trainer = Trainer(model, graphs, cfg.optimizer, seed=cfg.seed, log_path=log_path)
    try:
        trainer.train()
    except (NonFiniteGradientError, FloatingPointError) as exc:
        raise NumericalFailure(str(exc)) from exc
    save_extra = {"epoch": trainer.epoch, "seed": cfg.seed, "train": cfg.optimizer.to_dict(),
                  "node_counts": _node_counts_header(graphs)}
    save_model(ckpt_out, model, save_extra)
    if trainer.history:
        plot_training(trainer.history, out / "training.png")
    last = trainer.history[-1] if trainer.history else {}
    return {"model": cfg.model, "epochs": trainer.epoch, "checkpoint": str(ckpt_out), "last": last}


def cmd_sample(cfg: RunConfig, out: Path, args) -> dict:
    if not args.checkpoint:
        raise ConfigError("sample needs --checkpoint")
    count = args.count if args.count is not None else cfg.eval.count
    header, arrays = load_checkpoint(args.checkpoint)
    nc = NodeCountModel(tuple(header["node_counts"]["support"]), tuple(header["node_counts"]["probs"]))
    graphs = []
    log_probs = []
    if header["model"] == "er-baseline":
        base = ErBaseline(header["p_hat"], tuple(arrays["pool"].tolist()), nc)
        for i in range(count):
            rng = stream_rng(cfg.seed, "sample", i)
            graphs.append(base.sample(sample_n(nc, rng), rng))
    else:
        model, _ = load_model(args.checkpoint, _dtype(cfg))
        for i in range(count):
            rng = stream_rng(cfg.seed, "sample", i)
            g, lp = model.sample(sample_n(nc, rng), rng)
            graphs.append(g)
            log_probs.append(lp)
    write_graphs(graphs, out / "samples.jsonl")
    return {"model": header["model"], "count": count, "path": str(out / "samples.jsonl"),
            "mean_log_prob": float(np.mean(log_probs)) if log_probs else None}


def cmd_eval(cfg: RunConfig, out: Path, args) -> dict:
    gen_path = args.generated or cfg.paths.get("generated")
    test_path = args.test or cfg.paths.get("test")
    if not gen_path or not test_path:
        raise ConfigError("eval needs --generated and --test (or paths.generated and paths.test)")
    generated, test = read_graphs(gen_path), read_graphs(test_path)
    if not generated or not test:
        raise ConfigError("eval needs nonempty generated and test sets")
    report = evaluate(generated, test, cfg.eval.kinds, cfg.eval.structure)
    report["dataset"], report["model"] = cfg.dataset.kind, cfg.model
    _write_json(out / "report.json", report)
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "model", "metric", "value", "n_generated", "n_test"])
        rows = [(f"mmd:{k}", v) for k, v in report["mmd"].items()]
        for name in ("generated", "test"):
            for key, val in (report[f"weights_{name}"] or {}).items():
                rows.append((f"weights_{name}:{key}", val))
        for name, val in report.get("error_rate", {}).items():
            rows.append((f"error_rate:{name}", val))
        for metric, val in rows:
            w.writerow([cfg.dataset.kind, cfg.model, metric, "" if val is None else val,
                        report["n_generated"], report["n_test"]])
    plot_eval(report, generated, test, out / "eval.png")
    return report


def _gradcheck_one(kind: str, g: WeightedGraph, cfg: RunConfig) -> dict:
    gc = cfg.gradcheck
    dims = {"hidden": gc.hidden, "wt_hidden": gc.wt_hidden} if kind == "bigg-e" else {"hidden": gc.hidden}
    model = make_model(kind, dims, [g], seed=cfg.seed, dtype=torch.float64)

    def closure():
        return model.loss([g], 1.0)[0]

    rep = grad_check(closure, model.store, tolerance=gc.tolerance, coords=gc.coords, seed=cfg.seed)
    return {"model": kind, "n": g.n, "m": g.m, "loss": rep["loss"], "max_rel_err": rep["max_rel_err"],
            "passed": rep["passed"], "coordinates": rep["coordinates"], "per_param": rep["per_param"]}


def cmd_gradcheck(cfg: RunConfig, out: Path, args) -> dict:
    gc = cfg.gradcheck
    rng = stream_rng(cfg.seed, "eval")
    g = GENERATORS["er"](1, n_range=(gc.n, gc.n), edge_prob=gc.edge_prob, rng=rng)[0]
    report = {"graph": {"n": g.n, "edges": [list(e) for e in g.edges]},
              "results": [_gradcheck_one(k, g, cfg) for k in ("bigg-e", "adj-lstm")]}
    report["passed"] = all(r["passed"] for r in report["results"])
    _write_json(out / "gradcheck.json", report)
    if not report["passed"]:
        worst = max(r["max_rel_err"] for r in report["results"])
        raise NumericalFailure(f"gradient check failed: max relative error {worst:.3e} > {gc.tolerance}")
    return {k: v for k, v in report.items() if k != "graph"}


def cmd_bench(cfg: RunConfig, out: Path, args) -> dict:
    b = cfg.bench
    result = run_bench(b.bigg_sizes, b.adj_sizes, {"hidden": b.hidden, "wt_hidden": b.wt_hidden},
                       {"hidden": b.adj_hidden}, repeats=b.repeats, seed=cfg.seed, precision=cfg.precision,
                       rounds=b.rounds)
    _write_json(out / "bench.json", result)
    with open(out / "bench.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["model", "n", "sample_s", "train_step_s", "peak_rss_mb"])
        w.writeheader()
        w.writerows(result["rows"])
    plot_bench(result["rows"], out / "bench.png")
    return result


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bigge", description="Weighted graph generation with BiGG-E and Adj-LSTM.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "generate a synthetic dataset and its train/test split",
        "train": "train a model (resume with --checkpoint)",
        "sample": "sample graphs from a checkpoint",
        "eval": "compare generated graphs with a test set",
        "gradcheck": "finite-difference gradient check of both models",
        "bench": "scaling benchmark on path graphs",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, default=None, help="TOML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--checkpoint", type=Path, default=None, help="checkpoint to load")
        p.add_argument("--count", type=int, default=None, help="number of graphs to sample")
        p.add_argument("--precision", type=int, choices=(32, 64), default=None, help="floating-point width")
        p.add_argument("--generated", type=Path, default=None, help="generated graphs (.jsonl) for eval")
        p.add_argument("--test", type=Path, default=None, help="test graphs (.jsonl) for eval")
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be nonnegative")
            cfg = replace(cfg, seed=args.seed)
        if args.precision is not None:
            cfg = replace(cfg, precision=args.precision)
        if args.count is not None and args.count < 1:
            raise ConfigError("count must be positive")
        args.out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command](cfg, args.out, args)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except (NumericalFailure, NonFiniteGradientError, FloatingPointError) as exc:
        return _fail("numerical", str(exc), EXIT_NUMERIC)
    except (OSError, CheckpointError, GraphFormatError, GraphValidationError, json.JSONDecodeError, KeyError) as exc:
        return _fail("io", str(exc), EXIT_IO)
    print(json.dumps(result, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
