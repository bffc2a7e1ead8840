"""Weighted graph container, canonical orderings and the ``.jsonl`` graph format.

Graphs are undirected and simple. Only the strict lower triangle is stored:
every edge is a triple ``(i, j, w)`` with ``0 <= j < i < n`` and ``w > 0``,
sorted by ``(i, j)``, which is also the order in which the models generate
edges (row by row, left to right inside a row).
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "WeightedGraph",
    "NodeOrdering",
    "GraphFormatError",
    "GraphValidationError",
    "validate",
    "canonicalize",
    "read_graphs",
    "write_graphs",
]


class GraphFormatError(ValueError):
    """A line of a graph file could not be parsed."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class GraphValidationError(ValueError):
    """A parsed graph violates the WeightedGraph invariants."""

    def __init__(self, violations: list[str], index: int | None = None):
        where = f"graph {index}: " if index is not None else ""
        super().__init__(where + "; ".join(violations))
        self.violations = violations
        self.index = index


@dataclass(frozen=True)
class WeightedGraph:
    n: int
    edges: tuple[tuple[int, int, float], ...] = ()

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence]) -> "WeightedGraph":
        """Build a graph from edges in any orientation/order.

        Each ``(a, b, w)`` is stored as ``(max, min, w)`` and the list is sorted.
        Nothing else is checked; call :func:`validate` for that.
        """
        norm = []
        for a, b, w in edges:
            a, b = int(a), int(b)
            if a < b:
                a, b = b, a
            norm.append((a, b, float(w)))
        norm.sort(key=lambda e: (e[0], e[1]))
        return cls(int(n), tuple(norm))

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def weights(self) -> np.ndarray:
        return np.array([e[2] for e in self.edges], dtype=np.float64)

    def rows(self) -> list[tuple[list[int], list[float]]]:
        """Per row ``u`` the sorted earlier neighbours and their weights."""
        out: list[tuple[list[int], list[float]]] = [([], []) for _ in range(self.n)]
        for i, j, w in self.edges:
            out[i][0].append(j)
            out[i][1].append(w)
        return out

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for i, j, _ in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def weighted_degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.float64)
        for i, j, w in self.edges:
            deg[i] += w
            deg[j] += w
        return deg

    def adjacency(self, weighted: bool = True) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=np.float64)
        for i, j, w in self.edges:
            a[i, j] = a[j, i] = w if weighted else 1.0
        return a

    def neighbor_lists(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for i, j, _ in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        for lst in adj:
            lst.sort()
        return adj

    def to_networkx(self, weighted: bool = True):
        import networkx as nx

        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        for i, j, w in self.edges:
            if weighted:
                g.add_edge(i, j, weight=w)
            else:
                g.add_edge(i, j)
        return g


@dataclass(frozen=True)
class NodeOrdering:
    """A relabelling ``new_label = perm[old_label]``."""

    perm: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if sorted(self.perm) != list(range(len(self.perm))):
            raise ValueError("perm is not a permutation")

    def inverse(self) -> "NodeOrdering":
        inv = [0] * len(self.perm)
        for old, new in enumerate(self.perm):
            inv[new] = old
        return NodeOrdering(tuple(inv))

    def apply(self, g: WeightedGraph) -> WeightedGraph:
        if len(self.perm) != g.n:
            raise ValueError(f"ordering has {len(self.perm)} nodes, graph has {g.n}")
        p = self.perm
        return WeightedGraph.from_edges(g.n, ((p[i], p[j], w) for i, j, w in g.edges))


def validate(g: WeightedGraph) -> list[str]:
    """Return every violated invariant; an empty list means the graph is valid."""
    out: list[str] = []
    if not isinstance(g.n, (int, np.integer)) or g.n < 1:
        out.append(f"node count {g.n!r} < 1")
        return out
    seen: set[tuple[int, int]] = set()
    prev = None
    for k, (i, j, w) in enumerate(g.edges):
        if i == j:
            out.append(f"edge {k}: self-loop at node {i}")
        elif not (0 <= j < i < g.n):
            out.append(f"edge {k}: index out of bounds or not lower-triangular ({i}, {j})")
        if (i, j) in seen:
            out.append(f"edge {k}: duplicate edge ({i}, {j})")
        seen.add((i, j))
        if not (isinstance(w, (float, int, np.floating)) and math.isfinite(w) and w > 0):
            out.append(f"edge {k}: nonpositive weight {w!r}")
        if prev is not None and (i, j) < prev:
            out.append(f"edge {k}: ordering, ({i}, {j}) after {prev}")
        prev = (i, j)
    return out


def _bfs_order(g: WeightedGraph) -> list[int]:
    adj = g.neighbor_lists()
    deg = [len(a) for a in adj]
    visited = [False] * g.n
    order: list[int] = []
    # components are started from the highest-degree unvisited node
    by_degree = sorted(range(g.n), key=lambda v: (-deg[v], v))
    for start in by_degree:
        if visited[start]:
            continue
        visited[start] = True
        queue = deque([start])
        while queue:
            v = queue.popleft()
            order.append(v)
            for nb in adj[v]:
                if not visited[nb]:
                    visited[nb] = True
                    queue.append(nb)
    return order


def canonicalize(g: WeightedGraph, mode: str = "as-given") -> WeightedGraph:
    """Relabel ``g`` by a canonical node ordering.

    ``as-given`` keeps the labels. ``bfs-from-max-degree`` runs BFS from the
    highest-degree node (ties by smallest label), visiting neighbours in label
    order, and labels nodes in visit order.
    """
    if mode == "as-given":
        return g
    if mode != "bfs-from-max-degree":
        raise ValueError(f"unknown ordering mode {mode!r}")
    order = _bfs_order(g)
    perm = [0] * g.n
    for new, old in enumerate(order):
        perm[old] = new
    return NodeOrdering(tuple(perm)).apply(g)


def _graph_to_json(g: WeightedGraph) -> str:
    return json.dumps({"n": g.n, "edges": [[i, j, w] for i, j, w in g.edges]})


def _graph_from_obj(obj, line: int) -> WeightedGraph:
    if not isinstance(obj, dict) or "n" not in obj or "edges" not in obj:
        raise GraphFormatError('expected an object with keys "n" and "edges"', line)
    n = obj["n"]
    if not isinstance(n, int) or isinstance(n, bool):
        raise GraphFormatError(f"node count must be an integer, got {n!r}", line)
    edges = []
    for e in obj["edges"]:
        if not isinstance(e, list) or len(e) != 3:
            raise GraphFormatError(f"edge {e!r} must be [i, j, w]", line)
        i, j, w = e
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in (i, j)):
            raise GraphFormatError(f"edge {e!r} has non-integer indices", line)
        if not isinstance(w, (int, float)) or isinstance(w, bool):
            raise GraphFormatError(f"edge {e!r} has a non-numeric weight", line)
        edges.append((i, j, float(w)))
    return WeightedGraph(n, tuple(edges))


def read_graphs(path: str | Path) -> list[WeightedGraph]:
    """Read a ``.jsonl`` graph file, one ``{"n": .., "edges": [[i, j, w], ..]}`` per line.

    Blank lines are skipped. Raises :class:`GraphFormatError` with the 1-based
    line number on malformed input and :class:`GraphValidationError` with the
    0-based graph index when a graph breaks an invariant.
    """
    graphs: list[WeightedGraph] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text:
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise GraphFormatError(f"invalid JSON ({exc.msg})", lineno) from None
            g = _graph_from_obj(obj, lineno)
            problems = validate(g)
            if problems:
                raise GraphValidationError(problems, index=len(graphs))
            graphs.append(g)
    return graphs


def write_graphs(graphs: Iterable[WeightedGraph], path: str | Path) -> None:
    # json uses repr() for floats, the shortest string that round-trips exactly
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(_graph_to_json(g))
            fh.write("\n")
