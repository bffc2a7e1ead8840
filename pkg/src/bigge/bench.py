"""Scaling benchmark on path graphs: sampling time, train-step time and peak memory per size.

Every (model, size) cell runs in a fresh interpreter so that peak resident
memory is attributable to that cell alone.
"""
from __future__ import annotations

import argparse
import json
import resource
import subprocess
import sys
import time

import numpy as np
import torch

from .datasets import stream_rng
from .graph import WeightedGraph

__all__ = ["path_graph", "measure", "run_cell", "run_bench", "time_sampler"]


def path_graph(n: int, rng: np.random.Generator) -> WeightedGraph:
    w = rng.uniform(0.5, 1.5, size=max(n - 1, 0))
    return WeightedGraph(n, tuple((i, i - 1, float(w[i - 1])) for i in range(1, n)))


def _model(kind: str, dims: dict, g: WeightedGraph, seed: int, dtype: torch.dtype):
    from .training import make_model

    return make_model(kind, dims, [g], seed=seed, dtype=dtype)


def time_sampler(model, g: WeightedGraph, repeats: int) -> float:
    """Best-of-``repeats`` wall time of one sampler pass forced along ``g``."""
    run = model.guided_sample_time_run if hasattr(model, "guided_sample_time_run") else (
        lambda h: model.sample(h.n, guide=h))
    best = float("inf")
    for _ in range(max(repeats, 1)):
        t0 = time.perf_counter()
        run(g)
        best = min(best, time.perf_counter() - t0)
    return best


def _time_train_step(model, g: WeightedGraph, repeats: int) -> float:
    best = float("inf")
    for _ in range(max(repeats, 1)):
        model.store.zero_grad()
        t0 = time.perf_counter()
        loss, _ = model.loss([g], 0.1)
        loss.backward()
        best = min(best, time.perf_counter() - t0)
    model.store.zero_grad()
    return best


def measure(kind: str, n: int, dims: dict, repeats: int = 3, seed: int = 0, precision: int = 64,
            train: bool = True) -> dict:
    dtype = torch.float64 if precision == 64 else torch.float32
    g = path_graph(n, stream_rng(seed, "bench", n))
    model = _model(kind, dims, g, seed, dtype)
    # warm-up on a small graph so lazy initialisation is not timed
    warm = path_graph(min(n, 16), stream_rng(seed, "bench", 0))
    time_sampler(model, warm, 1)
    row = {"model": kind, "n": n, "sample_s": time_sampler(model, g, repeats)}
    row["train_step_s"] = _time_train_step(model, g, repeats) if train else float("nan")
    row["peak_rss_mb"] = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0
    return row


def run_cell(kind: str, n: int, dims: dict, repeats: int, seed: int, precision: int, train: bool = True) -> dict:
    job = json.dumps({"kind": kind, "n": n, "dims": dims, "repeats": repeats, "seed": seed,
                       "precision": precision, "train": train})
    proc = subprocess.run([sys.executable, "-m", "bigge.bench", job], capture_output=True, text=True, check=False)
    if proc.returncode != 0:
        raise RuntimeError(f"benchmark worker failed for {kind} n={n}: {proc.stderr.strip()[-2000:]}")
    return json.loads(proc.stdout.strip().splitlines()[-1])


def run_bench(bigg_sizes, adj_sizes, bigg_dims: dict, adj_dims: dict, repeats: int = 3, seed: int = 0,
              precision: int = 64, train: bool = True, rounds: int = 3) -> dict:
    """Time every cell in ``rounds`` interleaved passes and keep each cell's best times.

    Timings of one workload differ by tens of percent between interpreter
    processes, so a ratio taken from one process per size is fragile.
    Interleaving exposes every size to the same machine conditions.
    """
    cells = [("bigg-e", n, bigg_dims) for n in bigg_sizes] + [("adj-lstm", n, adj_dims) for n in adj_sizes]
    best: dict[tuple[str, int], dict] = {}
    for _ in range(max(rounds, 1)):
        for kind, n, dims in cells:
            row = run_cell(kind, n, dims, repeats, seed, precision, train)
            prev = best.get((kind, n))
            if prev is None:
                best[(kind, n)] = row
                continue
            for key in ("sample_s", "train_step_s"):
                prev[key] = min(prev[key], row[key])
            prev["peak_rss_mb"] = max(prev["peak_rss_mb"], row["peak_rss_mb"])
    rows = [best[(kind, n)] for kind, n, _ in cells]
    ratios = {}
    for kind, sizes in (("bigg-e", bigg_sizes), ("adj-lstm", adj_sizes)):
        if len(sizes) >= 2:
            lo, hi = min(sizes), max(sizes)
            t = {r["n"]: r["sample_s"] for r in rows if r["model"] == kind}
            ratios[kind] = {"sizes": [lo, hi], "sample_time_ratio": t[hi] / t[lo]}
    return {"rows": rows, "ratios": ratios}


def _worker(argv: list[str]) -> int:
    parser = argparse.ArgumentParser(prog="python -m bigge.bench")
    parser.add_argument("job", help="JSON object with kind, n, dims, repeats, seed, precision, train")
    job = json.loads(parser.parse_args(argv).job)
    torch.set_num_threads(1)
    print(json.dumps(measure(job["kind"], job["n"], job["dims"], job["repeats"], job["seed"],
                             job["precision"], job.get("train", True))))
    return 0


if __name__ == "__main__":
    sys.exit(_worker(sys.argv[1:]))
