"""Append-only Fenwick summary trees over hidden states.

Leaves are numbered 1..count. Node ``(i, j)`` at level ``i`` covers leaves
``(j-1)*2^i + 1 .. j*2^i``; level ``i`` holds ``floor(count / 2^i)`` nodes and
node ``(i, j)`` for ``i >= 1`` is ``merge(node(i-1, 2j-1), node(i-1, 2j))``.

The prefix summary of the first ``count`` leaves folds the blocks of the
binary decomposition of ``count`` from the lowest set bit (most recent leaves)
to the highest: ``acc = summary(acc, older_block)``. A single block is
returned unmerged.

Two interchangeable constructions are provided: :class:`FenwickStateTree`
appends one leaf at a time (sampling), while :func:`build_levels` and
:func:`prefix_summaries` process whole levels and fold steps as batches
(training). Both apply the same cell calls to the same operands.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch

from .nn import State

__all__ = [
    "blocks",
    "stored_states",
    "FenwickStateTree",
    "build_levels",
    "prefix_summaries",
    "fold_addresses",
    "state_cat",
    "state_take",
    "state_scatter",
    "Forest",
]

Merge = Callable[[State, State], State]


def blocks(count: int) -> list[tuple[int, int, tuple[int, int]]]:
    """Fenwick decomposition of ``1..count`` as ``(level, j, (first, last))``, lowest bit first."""
    if count < 1:
        raise ValueError("count must be >= 1")
    out = []
    i = 0
    while count >> i:
        if (count >> i) & 1:
            j = count >> i
            out.append((i, j, ((j - 1) * (1 << i) + 1, j * (1 << i))))
        i += 1
    return out


def stored_states(count: int) -> int:
    return 2 * count - bin(count).count("1")


def _trailing_zeros(k: int) -> int:
    return (k & -k).bit_length() - 1


class FenwickStateTree:
    """Incremental Fenwick tree. ``merge`` builds internal nodes, ``summary`` folds prefixes."""

    def __init__(self, merge: Merge, summary: Merge):
        self.merge = merge
        self.summary = summary
        self.levels: list[list[State]] = []
        self.count = 0
        self.merges = 0

    def append(self, leaf: State) -> int:
        """Add a leaf and return the number of merges performed (the 2-adic valuation of the new count)."""
        if self.levels and np.shape(leaf.h) != np.shape(self.levels[0][0].h):
            raise ValueError("leaf dimension does not match the tree")
        self.count += 1
        if not self.levels:
            self.levels.append([])
        self.levels[0].append(leaf)
        done = 0
        for i in range(1, _trailing_zeros(self.count) + 1):
            if len(self.levels) <= i:
                self.levels.append([])
            below = self.levels[i - 1]
            self.levels[i].append(self.merge(below[-2], below[-1]))
            done += 1
        self.merges += done
        return done

    def node(self, level: int, j: int) -> State:
        """Node ``(level, j)`` with 1-based ``j``."""
        return self.levels[level][j - 1]

    def stored(self) -> int:
        return sum(len(lv) for lv in self.levels)

    def prefix_summary(self, count: int | None = None) -> State:
        """Summary of leaves ``1..count`` (default: all leaves appended so far)."""
        count = self.count if count is None else count
        if count < 1:
            raise ValueError("prefix summary of an empty tree")
        if count > self.count:
            raise ValueError(f"only {self.count} leaves appended")
        parts = [self.levels[i][j - 1] for i, j, _ in blocks(count)]
        acc = parts[0]
        for s in parts[1:]:
            acc = self.summary(acc, s)
        return acc


# ---------------------------------------------------------------- batched helpers

def state_cat(states: Sequence[State]) -> State:
    if isinstance(states[0].h, torch.Tensor):
        return State(torch.cat([s.h for s in states]), torch.cat([s.c for s in states]))
    return State(np.concatenate([s.h for s in states]), np.concatenate([s.c for s in states]))


def state_take(s: State, idx: np.ndarray) -> State:
    if isinstance(s.h, torch.Tensor):
        t = torch.as_tensor(idx, dtype=torch.long)
        return State(s.h.index_select(0, t), s.c.index_select(0, t))
    return State(s.h[idx], s.c[idx])


def state_scatter(base: State, idx: np.ndarray, new: State) -> State:
    """Out-of-place ``base[idx] = new``."""
    if isinstance(base.h, torch.Tensor):
        t = torch.as_tensor(idx, dtype=torch.long)
        return State(base.h.index_copy(0, t, new.h), base.c.index_copy(0, t, new.c))
    h, c = base.h.copy(), base.c.copy()
    h[idx] = new.h
    c[idx] = new.c
    return State(h, c)


def build_levels(leaves: State, merge: Merge) -> list[State]:
    """All levels of the tree over ``leaves`` (shape ``(K, d)``), one batched merge per level."""
    levels = [leaves]
    while levels[-1].h.shape[0] >= 2:
        prev = levels[-1]
        k = prev.h.shape[0] // 2
        left = state_take(prev, np.arange(0, 2 * k, 2))
        right = state_take(prev, np.arange(1, 2 * k, 2))
        levels.append(merge(left, right))
    return levels


def fold_addresses(counts: Sequence[int], offsets: Sequence[int]) -> list[list[int]]:
    """Flat bank addresses of each count's blocks, lowest bit first.

    ``offsets[i]`` is where level ``i`` starts in the flattened bank.
    """
    return [[offsets[i] + j - 1 for i, j, _ in blocks(c)] for c in counts]


def fold(bank: State, addresses: Sequence[Sequence[int]], summary: Merge) -> tuple[State, int]:
    """Left-fold ``summary`` over each address list, batching one fold position per step.

    Returns the stacked results and the number of sequential fold steps.
    """
    first = np.array([a[0] for a in addresses], dtype=np.int64)
    acc = state_take(bank, first)
    lengths = np.array([len(a) for a in addresses])
    steps = 0
    for s in range(1, int(lengths.max(initial=1))):
        active = np.nonzero(lengths > s)[0]
        nxt = np.array([addresses[r][s] for r in active], dtype=np.int64)
        merged = summary(state_take(acc, active), state_take(bank, nxt))
        acc = state_scatter(acc, active, merged)
        steps += 1
    return acc, steps


def prefix_summaries(levels: list[State], counts: Sequence[int], summary: Merge) -> State:
    """Prefix summaries for every ``count`` in ``counts`` (each >= 1) from batched levels."""
    offsets = np.cumsum([0] + [lv.h.shape[0] for lv in levels[:-1]]).tolist()
    bank = state_cat(levels)
    out, _ = fold(bank, fold_addresses(counts, offsets), summary)
    return out


class Forest:
    """Address book for several Fenwick trees stored level by level in one flat bank.

    Level ``i`` of tree ``t`` holds ``sizes[t] >> i`` nodes. The bank lists
    level 0 of every tree, then level 1 of every tree, and so on, so one
    batched merge builds a whole level across all trees.
    """

    def __init__(self, sizes: Sequence[int]):
        self.sizes = [int(s) for s in sizes]
        counts = [np.array(self.sizes, dtype=np.int64)]
        while counts[-1].size and counts[-1].max() >= 2:
            counts.append(counts[-1] // 2)
        self.counts = counts
        self.tree_start = [np.concatenate([[0], np.cumsum(c)[:-1]]) if c.size else c for c in counts]
        totals = [int(c.sum()) for c in counts]
        self.level_start = np.concatenate([[0], np.cumsum(totals)[:-1]]).astype(np.int64)
        self.total = int(sum(totals))

    @property
    def depth(self) -> int:
        """Number of merge levels above the leaves."""
        return len(self.counts) - 1

    def address(self, t: int, i: int, j0: int) -> int:
        return int(self.level_start[i] + self.tree_start[i][t] + j0)

    def _level_operands(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        left, right = [], []
        for t, cnt in enumerate(self.counts[i]):
            base = self.level_start[i - 1] + self.tree_start[i - 1][t]
            j = np.arange(int(cnt))
            left.append(base + 2 * j)
            right.append(base + 2 * j + 1)
        return np.concatenate(left), np.concatenate(right)

    def build(self, leaves: State, merge: Merge) -> State:
        """Bank of every node; ``leaves`` are ordered by tree, then leaf index."""
        bank = leaves
        for i in range(1, len(self.counts)):
            li, ri = self._level_operands(i)
            new = merge(state_take(bank, li), state_take(bank, ri))
            bank = state_cat([bank, new])
        return bank

    def addresses(self, t: int, count: int) -> list[int]:
        return [self.address(t, i, j - 1) for i, j, _ in blocks(count)]

    def prefix(self, bank: State, queries: Sequence[tuple[int, int]], summary: Merge) -> tuple[State, int]:
        """Prefix summaries for ``(tree, count)`` queries, plus the number of fold steps."""
        return fold(bank, [self.addresses(t, c) for t, c in queries], summary)
