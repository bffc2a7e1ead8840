"""Evaluation: graph statistics, Gaussian-EMD MMD, structure checks and weight summaries."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import networkx as nx
import numpy as np
from scipy.stats import wasserstein_distance

from .graph import WeightedGraph

__all__ = [
    "KINDS",
    "SIGMAS",
    "GraphStatistic",
    "statistic",
    "normalized_laplacian_spectrum",
    "mmd",
    "is_tree",
    "is_lobster",
    "error_rate",
    "weight_summary",
    "evaluate",
]

KINDS = (
    "degree-hist",
    "clustering-hist",
    "laplacian-spectrum",
    "weighted-laplacian-spectrum",
    "weighted-degree-hist",
    "weight-sample",
)
SIGMAS = {
    "degree-hist": 1.0,
    "clustering-hist": 0.1,
    "laplacian-spectrum": 1.0,
    "weighted-laplacian-spectrum": 1.0,
    "weighted-degree-hist": 1.0,
    "weight-sample": 1.0,
}
CLUSTERING_BINS = 100
SPECTRUM_BINS = 200
SPECTRAL = ("laplacian-spectrum", "weighted-laplacian-spectrum")


@dataclass(frozen=True)
class GraphStatistic:
    """A discrete distribution: ``mass`` (sums to 1) on ``support`` points.

    Histograms put their mass on bin centres; samples put equal mass on each
    value. ``values`` keeps the raw values (sorted eigenvalues for spectra).
    """

    kind: str
    support: np.ndarray
    mass: np.ndarray
    values: np.ndarray


def _histogram(values: np.ndarray, bins: int, lo: float, hi: float, kind: str) -> GraphStatistic:
    counts, edges = np.histogram(np.clip(values, lo, hi), bins=bins, range=(lo, hi))
    centres = 0.5 * (edges[:-1] + edges[1:])
    return GraphStatistic(kind, centres, counts / counts.sum(), np.sort(values))


def _sample(values: np.ndarray, kind: str) -> GraphStatistic:
    values = np.sort(np.asarray(values, dtype=np.float64))
    if values.size == 0:
        # an edgeless graph has no weights; represent it by a point mass at 0
        return GraphStatistic(kind, np.zeros(1), np.ones(1), values)
    return GraphStatistic(kind, values, np.full(values.size, 1.0 / values.size), values)


def normalized_laplacian_spectrum(g: WeightedGraph, weighted: bool = False) -> np.ndarray:
    """Eigenvalues of ``D^-1/2 (D - A) D^-1/2``; isolated nodes get ``D^-1/2 = 0`` (eigenvalue 0)."""
    if g.n < 2:
        raise ValueError("spectral statistics need n >= 2")
    a = g.adjacency(weighted=weighted)
    deg = a.sum(axis=1)
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = 1.0 / np.sqrt(deg[nz])
    lap = inv[:, None] * (np.diag(deg) - a) * inv[None, :]
    return np.sort(np.linalg.eigvalsh(lap))


def statistic(g: WeightedGraph, kind: str) -> GraphStatistic:
    if kind == "degree-hist":
        deg = g.degrees()
        counts = np.bincount(deg, minlength=1).astype(np.float64)
        return GraphStatistic(kind, np.arange(counts.size, dtype=np.float64), counts / counts.sum(),
                              np.sort(deg.astype(np.float64)))
    if kind == "clustering-hist":
        cc = nx.clustering(g.to_networkx(weighted=False))
        vals = np.array([cc[v] for v in range(g.n)], dtype=np.float64)
        return _histogram(vals, CLUSTERING_BINS, 0.0, 1.0, kind)
    if kind in SPECTRAL:
        eig = normalized_laplacian_spectrum(g, weighted=kind.startswith("weighted"))
        # eigenvalues such as exactly 1 sit on bin edges; rounding keeps the bin
        # assignment independent of node labels and solver roundoff
        return _histogram(np.round(eig, 9), SPECTRUM_BINS, 0.0, 2.0, kind)
    if kind == "weighted-degree-hist":
        return _sample(g.weighted_degrees(), kind)
    if kind == "weight-sample":
        return _sample(g.weights, kind)
    raise ValueError(f"unknown statistic kind {kind!r}")


def _kernel(a: GraphStatistic, b: GraphStatistic, sigma: float) -> float:
    d = wasserstein_distance(a.support, b.support, a.mass, b.mass)
    return float(np.exp(-d * d / (2.0 * sigma * sigma)))


def _gram_mean(xs: Sequence[GraphStatistic], ys: Sequence[GraphStatistic], sigma: float) -> float:
    total = 0.0
    for x in xs:
        for y in ys:
            total += _kernel(x, y, sigma)
    return total / (len(xs) * len(ys))


def mmd(sample_a: Sequence[GraphStatistic], sample_b: Sequence[GraphStatistic],
        sigma: float | None = None, squared: bool = True) -> float:
    """Squared MMD with the kernel ``exp(-W1(x, y)^2 / (2 sigma^2))``, clipped at 0.

    Uses the V-statistic ``mean K_aa + mean K_bb - 2 mean K_ab``, which is
    defined for singleton samples and is exactly 0 when both samples are the
    same list.
    """
    if not sample_a or not sample_b:
        raise ValueError("MMD needs two nonempty samples")
    kinds = {s.kind for s in sample_a} | {s.kind for s in sample_b}
    if len(kinds) != 1:
        raise ValueError(f"statistic kinds differ: {sorted(kinds)}")
    kind = kinds.pop()
    sigma = SIGMAS[kind] if sigma is None else sigma
    kaa = _gram_mean(sample_a, sample_a, sigma)
    kbb = _gram_mean(sample_b, sample_b, sigma)
    kab = _gram_mean(sample_a, sample_b, sigma)
    val = max(kaa + kbb - 2.0 * kab, 0.0)
    return val if squared else float(np.sqrt(val))


# ---------------------------------------------------------------- structure checks

def _connected(adj: list[list[int]], nodes: set[int]) -> bool:
    if not nodes:
        return True
    start = next(iter(nodes))
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for nb in adj[v]:
            if nb in nodes and nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return seen == nodes


def is_tree(g: WeightedGraph) -> bool:
    return g.m == g.n - 1 and _connected(g.neighbor_lists(), set(range(g.n)))


def is_lobster(g: WeightedGraph) -> bool:
    """A tree that becomes a path (or nothing) after deleting its leaves twice."""
    if not is_tree(g):
        return False
    adj = g.neighbor_lists()
    alive = set(range(g.n))
    for _ in range(2):
        leaves = {v for v in alive if sum(nb in alive for nb in adj[v]) == 1}
        alive -= leaves
    return all(sum(nb in alive for nb in adj[v]) <= 2 for v in alive)


def error_rate(samples: Sequence[WeightedGraph], check: Callable[[WeightedGraph], bool]) -> float:
    if not samples:
        raise ValueError("no samples")
    return sum(not check(g) for g in samples) / len(samples)


def weight_summary(samples: Sequence[WeightedGraph]) -> tuple[float, float, float]:
    """Pooled mean and SD of all weights and the mean within-graph SD (sample SDs, ddof=1).

    Graphs with fewer than two edges are left out of the within-graph term.
    """
    pooled = np.concatenate([g.weights for g in samples]) if samples else np.zeros(0)
    if pooled.size == 0:
        raise ValueError("no edges in the sample")
    sd = float(pooled.std(ddof=1)) if pooled.size > 1 else 0.0
    per = [float(g.weights.std(ddof=1)) for g in samples if g.m >= 2]
    return float(pooled.mean()), sd, float(np.mean(per)) if per else float("nan")


# ---------------------------------------------------------------- report

def evaluate(generated: Sequence[WeightedGraph], test: Sequence[WeightedGraph],
             kinds: Sequence[str] = KINDS, structure: str | None = None) -> dict:
    """MMD for every statistic kind plus weight summaries and an optional structure error rate."""
    report: dict = {"n_generated": len(generated), "n_test": len(test), "mmd": {}}
    for kind in kinds:
        gs = [g for g in generated if kind not in SPECTRAL or g.n >= 2]
        ts = [g for g in test if kind not in SPECTRAL or g.n >= 2]
        if not gs or not ts:
            report["mmd"][kind] = None
            continue
        report["mmd"][kind] = mmd([statistic(g, kind) for g in gs], [statistic(g, kind) for g in ts])
    report["mmd"]["orbit"] = "n/a"
    for name, sample in (("generated", generated), ("test", test)):
        try:
            mean, sd, per = weight_summary(sample)
            report[f"weights_{name}"] = {"mean": mean, "sd": sd, "per_graph_sd": per}
        except ValueError:
            report[f"weights_{name}"] = None
    if structure is not None:
        check = {"tree": is_tree, "lobster": is_lobster}[structure]
        report["error_rate"] = {"generated": error_rate(generated, check), "test": error_rate(test, check)}
    return report
