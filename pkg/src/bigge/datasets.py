"""Synthetic weighted-graph generators, the node-count model and the Erdos-Renyi baseline.

All generators are pure functions of their arguments and the supplied
``numpy.random.Generator``. Node labels follow each generator's construction
order, which is the canonical ordering used for training.
"""
from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import WeightedGraph
from .weights import softplus

__all__ = [
    "gen_er",
    "gen_tree",
    "gen_lobster",
    "gen_joint_tree",
    "NodeCountModel",
    "fit_node_count",
    "sample_n",
    "ErBaseline",
    "er_baseline",
    "stream_rng",
    "GENERATORS",
    "STREAMS",
]

# Counter-based seeding: every random stream is default_rng([seed, stream, counter]).
STREAMS = {"data": 1, "split": 2, "init": 3, "train": 4, "sample": 5, "eval": 6, "bench": 7}


def stream_rng(seed: int, stream: str, counter: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAMS[stream], int(counter)])


def _randint(rng: np.random.Generator, lo_hi: Sequence[int]) -> int:
    lo, hi = int(lo_hi[0]), int(lo_hi[1])
    if lo > hi:
        raise ValueError(f"empty range {lo_hi}")
    return int(rng.integers(lo, hi + 1))


def gen_er(count: int, n_range: Sequence[int] = (400, 500), edge_prob: float = 5.4 / 449,
           rng: np.random.Generator | None = None) -> list[WeightedGraph]:
    """Erdos-Renyi graphs with ``softplus(N(0, 1))`` weights."""
    if not 0.0 <= edge_prob <= 1.0:
        raise ValueError("edge_prob must lie in [0, 1]")
    rng = rng or np.random.default_rng()
    out = []
    for _ in range(count):
        n = _randint(rng, n_range)
        ii, jj = np.tril_indices(n, -1)
        keep = rng.random(ii.size) < edge_prob
        w = softplus(rng.standard_normal(int(keep.sum())))
        out.append(WeightedGraph(n, tuple(zip(ii[keep].tolist(), jj[keep].tolist(), w.tolist()))))
    return out


def gen_tree(count: int, n_leaves_range: Sequence[int] = (16, 32),
             rng: np.random.Generator | None = None) -> list[WeightedGraph]:
    """Random bifurcating trees with hierarchical Gamma weights.

    The shape grows by splitting a uniformly chosen leaf into two children
    until the target leaf count is reached; nodes are labelled in creation
    order. Per tree ``mu ~ U(7, 13)`` and every edge weight is
    ``Gamma(shape=mu^2, scale=1/mu)``, so weights have mean ``mu`` and
    variance 1 within a tree.
    """
    rng = rng or np.random.default_rng()
    out = []
    for _ in range(count):
        leaves_target = _randint(rng, n_leaves_range)
        if leaves_target < 1:
            raise ValueError("a tree needs at least one leaf")
        leaves = [0]
        parent_edges: list[tuple[int, int]] = []
        n = 1
        while len(leaves) < leaves_target:
            k = int(rng.integers(len(leaves)))
            p = leaves[k]
            leaves[k] = leaves[-1]
            leaves.pop()
            for _child in range(2):
                parent_edges.append((n, p))
                leaves.append(n)
                n += 1
        mu = rng.uniform(7.0, 13.0)
        w = rng.gamma(mu * mu, 1.0 / mu, size=len(parent_edges))
        out.append(WeightedGraph.from_edges(n, [(c, p, x) for (c, p), x in zip(parent_edges, w.tolist())]))
    return out


def gen_lobster(count: int, backbone_range: Sequence[int] = (10, 33), p1: float = 0.8, p2: float = 0.8,
                rng: np.random.Generator | None = None) -> list[WeightedGraph]:
    """Lobsters: a path backbone, optional level-1 leaves, optional level-2 leaves.

    Each backbone node gets one level-1 neighbour with probability ``p1``;
    each level-1 node gets one level-2 neighbour with probability ``p2``.
    Nodes are labelled depth first along the backbone so every parent is a
    recent label. Weights are ``Beta(5, 15)``.
    """
    if not (0 <= p1 <= 1 and 0 <= p2 <= 1):
        raise ValueError("p1 and p2 must lie in [0, 1]")
    rng = rng or np.random.default_rng()
    out = []
    for _ in range(count):
        length = _randint(rng, backbone_range)
        edges: list[tuple[int, int]] = []
        n = 0
        prev = -1
        for _b in range(length):
            node = n
            n += 1
            if prev >= 0:
                edges.append((node, prev))
            prev = node
            if rng.random() < p1:
                l1 = n
                n += 1
                edges.append((l1, node))
                if rng.random() < p2:
                    edges.append((n, l1))
                    n += 1
        w = rng.beta(5.0, 15.0, size=len(edges))
        out.append(WeightedGraph.from_edges(n, [(a, b, x) for (a, b), x in zip(edges, w.tolist())]))
    return out


def gen_joint_tree(count: int, threshold: float = 4.0, low: float = 0.5, high: float = 1.5,
                   rng: np.random.Generator | None = None) -> list[WeightedGraph]:
    """Trees whose shape depends on their ``U(low, high)`` weights.

    A node at root distance ``L <= threshold`` keeps adding children until
    ``L`` plus the weights of its new edges exceeds the threshold; nodes
    beyond the threshold are leaves. Nodes are labelled breadth first.
    """
    rng = rng or np.random.default_rng()
    out = []
    for _ in range(count):
        edges: list[tuple[int, int, float]] = []
        queue = deque([(0, 0.0)])
        n = 1
        while queue:
            node, dist = queue.popleft()
            if dist > threshold:
                continue
            total = 0.0
            while dist + total <= threshold:
                w = float(rng.uniform(low, high))
                while w <= low:  # keep the support open at the lower end
                    w = float(rng.uniform(low, high))
                total += w
                edges.append((n, node, w))
                queue.append((n, dist + w))
                n += 1
        out.append(WeightedGraph.from_edges(n, edges))
    return out


GENERATORS = {
    "er": gen_er,
    "tree": gen_tree,
    "lobster": gen_lobster,
    "joint_tree": gen_joint_tree,
}


# ---------------------------------------------------------------- node counts and baseline

@dataclass(frozen=True)
class NodeCountModel:
    support: tuple[int, ...]
    probs: tuple[float, ...]

    def prob(self, n: int) -> float:
        return dict(zip(self.support, self.probs)).get(n, 0.0)


def fit_node_count(graphs: Sequence[WeightedGraph]) -> NodeCountModel:
    if not graphs:
        raise ValueError("cannot fit a node-count model to an empty set")
    counts = Counter(g.n for g in graphs)
    support = tuple(sorted(counts))
    total = sum(counts.values())
    return NodeCountModel(support, tuple(counts[n] / total for n in support))


def sample_n(model: NodeCountModel, rng: np.random.Generator, size: int | None = None):
    draw = rng.choice(np.array(model.support), size=size, p=np.array(model.probs))
    return int(draw) if size is None else draw.astype(int)


@dataclass(frozen=True)
class ErBaseline:
    """Independent edges with the pooled edge density and bootstrapped training weights."""

    p_hat: float
    pool: tuple[float, ...]
    sizes: NodeCountModel

    def sample(self, n: int, rng: np.random.Generator) -> WeightedGraph:
        ii, jj = np.tril_indices(n, -1)
        keep = rng.random(ii.size) < self.p_hat
        w = rng.choice(np.array(self.pool), size=int(keep.sum()), replace=True) if self.pool else []
        return WeightedGraph(n, tuple(zip(ii[keep].tolist(), jj[keep].tolist(), np.asarray(w).tolist())))

    def generate(self, count: int, rng: np.random.Generator) -> list[WeightedGraph]:
        return [self.sample(sample_n(self.sizes, rng), rng) for _ in range(count)]


def er_baseline(graphs: Sequence[WeightedGraph], rng: np.random.Generator | None = None) -> ErBaseline:
    if not graphs:
        raise ValueError("cannot fit the baseline to an empty set")
    pairs = sum(g.n * (g.n - 1) // 2 for g in graphs)
    edges = sum(g.m for g in graphs)
    pool = tuple(w for g in graphs for _, _, w in g.edges)
    return ErBaseline(edges / pairs if pairs else 0.0, pool, fit_node_count(graphs))
