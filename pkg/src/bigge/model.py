"""BiGG-E: row-wise binary decision trees with Fenwick topology and weight states.

Generation order. Row ``u`` (``1 <= u < n``) chooses its neighbours among
``0..u-1``. It starts with one Bernoulli "row has any edge" decision, then
descends a binary tree over the interval ``[0, u-1]``. An interval
``[lo, hi]`` splits at ``mid = lo + (hi - lo + 1) // 2`` into ``[lo, mid-1]``
and ``[mid, hi]``. Each visited node decides whether its left child holds an
edge, recurses into it, then decides the right child. The right bit is
implied (and not scored) when the left bit is 0, since a visited interval
always holds an edge. Every singleton interval reached is an edge and
immediately draws its weight.

States. ``h_top`` of a node is the top-down context: the row summary at the
root, then an LSTM step on a left/right one-hot for each descent. After the
left subtree is finished, ``h_hat = cell_l2r(h_top, h_bot(left))`` carries its
bottom-up summary into the right decision. ``h_bot`` of a leaf is a learned
state; of an internal node it is ``cell_bot(h_bot(left), h_bot(right))``
with a learned empty state for a missing child. The root ``h_bot`` of each
nonempty row (a learned state for empty rows) is a leaf of the topology
Fenwick tree; the row summary of row ``u`` folds the first ``u - 1`` of those
leaves (a learned state for ``u = 1``) and receives a positional encoding of
``n - u`` on its hidden vector.

Weights. Each weight is embedded by one LSTM step on its standardized value
and appended to the weight Fenwick tree; ``h_wt(k)`` summarizes the first
``k`` weights (a learned state for ``k = 0``). Every decision and every weight
reads ``h_sum = merge(state, h_wt(k))`` where ``k`` counts the weights drawn
before it, so decisions later in a row see the weights drawn earlier in it.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import torch

from . import weights as wd
from .fenwick import FenwickStateTree, Forest, state_cat, state_scatter, state_take
from .graph import WeightedGraph
from .nn import (
    MLP,
    LSTMCell,
    ParameterStore,
    State,
    TreeLSTMCell,
    log_sigmoid,
    positional_encoding,
    sigmoid,
)

__all__ = [
    "BiggEConfig",
    "BiggE",
    "RowNode",
    "encode_row",
    "decode_row",
    "split_point",
]

NONEMPTY, LEFT, RIGHT, WEIGHT = 0, 1, 2, 3
_ONEHOT = np.eye(2)


# ---------------------------------------------------------------- row codec

def split_point(lo: int, hi: int) -> int:
    """First index of the right half of ``[lo, hi]``."""
    return lo + (hi - lo + 1) // 2


@dataclass
class RowNode:
    lo: int
    hi: int
    has_left: int = 0
    has_right: int = 0
    left: "RowNode | None" = None
    right: "RowNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.lo == self.hi

    def decisions(self) -> list[tuple[int, int, int]]:
        """``(lo, hi, (has_left, has_right))`` in visiting order, leaves omitted."""
        if self.is_leaf:
            return []
        out = [(self.lo, self.hi, (self.has_left, self.has_right))]
        for ch in (self.left, self.right):
            if ch is not None:
                out.extend(ch.decisions())
        return out


def encode_row(neighbors: Sequence[int], u: int) -> RowNode | None:
    """Decision tree of row ``u`` with the given earlier neighbours; ``None`` for an empty row."""
    nb = sorted(set(int(v) for v in neighbors))
    if any(v < 0 or v >= u for v in nb):
        raise ValueError(f"neighbours of row {u} must lie in [0, {u - 1}]")
    if not nb:
        return None

    def build(lo: int, hi: int, items: list[int]) -> RowNode:
        node = RowNode(lo, hi)
        if lo == hi:
            return node
        mid = split_point(lo, hi)
        left = [v for v in items if v < mid]
        right = [v for v in items if v >= mid]
        node.has_left, node.has_right = int(bool(left)), int(bool(right))
        if left:
            node.left = build(lo, mid - 1, left)
        if right:
            node.right = build(mid, hi, right)
        return node

    return build(0, u - 1, nb)


def decode_row(tree: RowNode | None) -> list[int]:
    if tree is None:
        return []
    if tree.is_leaf:
        return [tree.lo]
    out: list[int] = []
    for ch in (tree.left, tree.right):
        if ch is not None:
            out.extend(decode_row(ch))
    return out


# ---------------------------------------------------------------- config and parameters

@dataclass(frozen=True)
class BiggEConfig:
    hidden: int = 256
    wt_hidden: int = 32
    head_hidden: int = 0
    merge_mode: str = "joint"
    wt_mean: float = 0.0
    wt_sd: float = 1.0

    def __post_init__(self):
        if self.hidden < 1 or self.wt_hidden < 1 or self.head_hidden < 0:
            raise ValueError("dimensions must be positive")
        if self.merge_mode not in ("joint", "passthrough"):
            raise ValueError(f"unknown merge mode {self.merge_mode!r}")

    @property
    def head_width(self) -> int:
        return self.head_hidden or self.hidden

    def to_dict(self) -> dict:
        return asdict(self)


_STATES = ("topo.empty", "topo.leaf", "topo.empty_row", "topo.init_row")


class _Plan:
    """Flat description of one graph's decision trees (all rows, generation order)."""

    def __init__(self, g: WeightedGraph):
        self.n, self.m = g.n, g.m
        rows_lo, rows_hi, depth, height, lch, rch, row_of = [], [], [], [], [], [], []
        # decisions: kind, reference (row index u-1 for NONEMPTY, node otherwise), k, bit
        kinds, refs, ks, bits = [], [], [], []
        roots = []
        w_list, w_node = [], []
        base = 0

        def new_node(u: int, lo: int, hi: int, d: int) -> int:
            rows_lo.append(lo)
            rows_hi.append(hi)
            depth.append(d)
            height.append(0)
            lch.append(-1)
            rch.append(-1)
            row_of.append(u)
            return len(rows_lo) - 1

        def visit(u: int, node: RowNode, d: int, nbrs: list[int], wts: list[float]) -> int:
            t = new_node(u, node.lo, node.hi, d)
            if node.is_leaf:
                pos = nbrs.index(node.lo)
                kinds.append(WEIGHT)
                refs.append(t)
                ks.append(base + pos)
                bits.append(1)
                w_list.append(wts[pos])
                w_node.append(t)
                return t
            mid = split_point(node.lo, node.hi)
            kinds.append(LEFT)
            refs.append(t)
            ks.append(base + sum(v < node.lo for v in nbrs))
            bits.append(node.has_left)
            if node.left is not None:
                lch[t] = visit(u, node.left, d + 1, nbrs, wts)
            if node.has_left:
                kinds.append(RIGHT)
                refs.append(t)
                ks.append(base + sum(v < mid for v in nbrs))
                bits.append(node.has_right)
            if node.right is not None:
                rch[t] = visit(u, node.right, d + 1, nbrs, wts)
            height[t] = 1 + max(height[c] for c in (lch[t], rch[t]) if c >= 0)
            return t

        for u, (nbrs, wts) in enumerate(g.rows()):
            if u == 0:
                continue
            tree = encode_row(nbrs, u)
            kinds.append(NONEMPTY)
            refs.append(u - 1)
            ks.append(base)
            bits.append(int(tree is not None))
            roots.append(visit(u, tree, 0, nbrs, wts) if tree is not None else -1)
            base += len(nbrs)

        self.depth = np.array(depth, dtype=np.int64)
        self.height = np.array(height, dtype=np.int64)
        self.lch = np.array(lch, dtype=np.int64)
        self.rch = np.array(rch, dtype=np.int64)
        self.row = np.array(row_of, dtype=np.int64)
        self.leaf = np.array(rows_lo, dtype=np.int64) == np.array(rows_hi, dtype=np.int64)
        self.roots = np.array(roots, dtype=np.int64)
        self.kind = np.array(kinds, dtype=np.int64)
        self.ref = np.array(refs, dtype=np.int64)
        self.k = np.array(ks, dtype=np.int64)
        self.bit = np.array(bits, dtype=np.int64)
        self.w = np.array(w_list, dtype=np.float64)
        self.w_node = np.array(w_node, dtype=np.int64)
        self.num_nodes = len(depth)


@lru_cache(maxsize=4096)
def _plan(g: WeightedGraph) -> _Plan:
    return _Plan(g)


def _offsets(sizes: Sequence[int]) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64) if len(sizes) else np.zeros(0, np.int64)


class BiggE:
    def __init__(self, config: BiggEConfig, store: ParameterStore | None = None, seed: int = 0,
                 dtype: torch.dtype = torch.float64):
        self.config = config
        d, dw, hh = config.hidden, config.wt_hidden, config.head_width
        self.cell_bot = TreeLSTMCell("cell_bot", d)
        self.cell_l2r = TreeLSTMCell("cell_l2r", d)
        self.cell_row = TreeLSTMCell("cell_row", d)
        self.cell_summary = TreeLSTMCell("cell_summary", d)
        self.cell_td = LSTMCell("cell_td", 2, d)
        self.merge_cell = TreeLSTMCell("merge", d, dw)
        self.head_nonempty = MLP("head_nonempty", (d, hh, 1))
        self.head_left = MLP("head_left", (d, hh, 1))
        self.head_right = MLP("head_right", (d, hh, 1))
        self.wt_embed = LSTMCell("wt.embed", 1, dw)
        self.wt_cell_row = TreeLSTMCell("wt.cell_row", dw)
        self.wt_cell_summary = TreeLSTMCell("wt.cell_summary", dw)
        self.head_mu = MLP("wt.head_mu", (d, hh, 1))
        self.head_logvar = MLP("wt.head_logvar", (d, hh, 1))
        self.standardizer = wd.WeightStandardizer(config.wt_mean, config.wt_sd)
        if store is None:
            store = ParameterStore(dtype)
            rng = np.random.default_rng(seed)
            for cell in (self.cell_bot, self.cell_l2r, self.cell_row, self.cell_summary, self.cell_td,
                         self.merge_cell, self.head_nonempty, self.head_left, self.head_right,
                         self.wt_embed, self.wt_cell_row, self.wt_cell_summary, self.head_mu,
                         self.head_logvar):
                cell.init(store, rng)
            bound = 1.0 / math.sqrt(d)
            for name in _STATES:
                store.add(f"{name}.h", rng.uniform(-bound, bound, d))
                store.add(f"{name}.c", rng.uniform(-bound, bound, d))
            bw = 1.0 / math.sqrt(dw)
            store.add("wt.init.h", rng.uniform(-bw, bw, dw))
            store.add("wt.init.c", rng.uniform(-bw, bw, dw))
        self.store = store

    # ------------------------------------------------------------ helpers

    @staticmethod
    def is_weight_param(name: str) -> bool:
        return name.startswith("wt.")

    def init_weight_heads(self, w: np.ndarray) -> None:
        """Start the weight heads at the training set's inverse-softplus mean and log-variance."""
        w = np.asarray(w, dtype=np.float64)
        if w.size == 0:
            return
        z = wd.inverse_softplus(w)
        z = np.atleast_1d(z)
        last = self.head_mu.depth - 1
        self.store.set_value(f"wt.head_mu.b{last}", [float(z.mean())])
        var = float(z.var()) if z.size > 1 else 1.0
        self.store.set_value(f"wt.head_logvar.b{last}", [math.log(max(var, 1e-6))])

    def _state(self, P, name: str) -> State:
        return State(P[f"{name}.h"], P[f"{name}.c"])

    def _merge(self, P, top: State, wt: State) -> State:
        if self.config.merge_mode == "passthrough":
            return top
        return self.merge_cell(P, top, wt)

    def _embed(self, P, z):
        """LSTM step from the zero state on standardized weights ``z`` of shape (..., 1)."""
        dw = self.config.wt_hidden
        if isinstance(z, torch.Tensor):
            zero = torch.zeros(z.shape[:-1] + (dw,), dtype=z.dtype)
        else:
            zero = np.zeros(z.shape[:-1] + (dw,))
        return self.wt_embed(P, z, State(zero, zero))

    # ------------------------------------------------------------ batched scorer

    def forward(self, graphs: Sequence[WeightedGraph]) -> dict:
        """Teacher-forced log-likelihood of a batch in four level-parallel stages.

        Returns per-graph ``topo_ll`` and ``wt_ll`` tensors plus a ``stages``
        dict: the sequential batched rounds of each stage and their critical
        path (the weight chain runs alongside the topology stages 1 to 3).
        """
        P = self.store.params
        dt = self.store.dtype
        d = self.config.hidden
        plans = [_plan(g) for g in graphs]
        B = len(plans)
        node_off = _offsets([p.num_nodes for p in plans])
        row_off = _offsets([p.n - 1 for p in plans])
        N = int(sum(p.num_nodes for p in plans))
        R = int(sum(p.n - 1 for p in plans))

        def shift(a: np.ndarray, off: int) -> np.ndarray:
            return np.where(a >= 0, a + off, -1)

        lch = np.concatenate([shift(p.lch, o) for p, o in zip(plans, node_off)]) if N else np.zeros(0, np.int64)
        rch = np.concatenate([shift(p.rch, o) for p, o in zip(plans, node_off)]) if N else np.zeros(0, np.int64)
        height = np.concatenate([p.height for p in plans]) if N else np.zeros(0, np.int64)
        depth = np.concatenate([p.depth for p in plans]) if N else np.zeros(0, np.int64)
        leaf = np.concatenate([p.leaf for p in plans]) if N else np.zeros(0, bool)

        stages = {"bottom_up": 0, "fenwick_levels": 0, "row_fold": 0, "top_down": 0,
                  "wt_embed": 0, "wt_levels": 0, "wt_fold": 0}

        # stage 1: bottom-up summaries, one batched merge per height
        empty, leaf_st = self._state(P, "topo.empty"), self._state(P, "topo.leaf")
        bot = State(torch.cat([empty.h[None], leaf_st.h.expand(N, d)]),
                    torch.cat([empty.c[None], leaf_st.c.expand(N, d)]))
        for h in range(1, int(height.max(initial=0)) + 1):
            idx = np.nonzero(height == h)[0]
            li = np.where(lch[idx] >= 0, lch[idx] + 1, 0)
            ri = np.where(rch[idx] >= 0, rch[idx] + 1, 0)
            new = self.cell_bot(P, state_take(bot, li), state_take(bot, ri))
            bot = state_scatter(bot, idx + 1, new)
            stages["bottom_up"] += 1

        # stage 2: topology Fenwick trees, one batched merge per level
        empty_row = self._state(P, "topo.empty_row")
        src = state_cat([State(empty_row.h[None], empty_row.c[None]), bot])
        leaf_idx = np.concatenate([np.where(p.roots >= 0, p.roots + o + 2, 0)
                                   for p, o in zip(plans, node_off)]) if R else np.zeros(0, np.int64)
        forest = Forest([p.n - 1 for p in plans])
        fbank = forest.build(state_take(src, leaf_idx), lambda a, b: self.cell_row(P, a, b))
        stages["fenwick_levels"] = forest.depth

        # stage 3: row summaries
        init_row = self._state(P, "topo.init_row")
        queries = [(t, u - 1) for t, p in enumerate(plans) for u in range(2, p.n)]
        row_src = State(init_row.h[None], init_row.c[None])
        qpos = {}
        if queries:
            folded, stages["row_fold"] = forest.prefix(fbank, queries, lambda a, b: self.cell_summary(P, a, b))
            row_src = state_cat([row_src, folded])
            qpos = {q: i + 1 for i, q in enumerate(queries)}
        row_idx = np.array([qpos.get((t, u - 1), 0) for t, p in enumerate(plans) for u in range(1, p.n)],
                           dtype=np.int64)
        rowtop = state_take(row_src, row_idx)
        if R:
            pe = np.concatenate([positional_encoding(p.n - np.arange(1, p.n), d) for p in plans if p.n > 1])
            rowtop = State(rowtop.h + torch.as_tensor(pe, dtype=dt), rowtop.c)

        # stage 4: top-down states, one depth per round
        top_pos = np.full(N, -1, dtype=np.int64)
        hat_pos = np.full(N, -1, dtype=np.int64)
        node_row = np.concatenate([p.row - 1 + o for p, o in zip(plans, row_off)]) if N else np.zeros(0, np.int64)
        cur = np.nonzero(depth == 0)[0] if N else np.zeros(0, np.int64)
        top_chunks: list[State] = []
        hat_chunks: list[State] = []
        n_top = n_hat = 0
        tcur = state_take(rowtop, node_row[cur]) if cur.size else None
        while cur.size:
            top_pos[cur] = n_top + np.arange(cur.size)
            n_top += cur.size
            top_chunks.append(tcur)
            local_int = np.nonzero(~leaf[cur])[0]
            if not local_int.size:
                break
            inode = cur[local_int]
            lb = np.where(lch[inode] >= 0, lch[inode] + 1, 0)
            hat = self.cell_l2r(P, state_take(tcur, local_int), state_take(bot, lb))
            hat_pos[inode] = n_hat + np.arange(inode.size)
            n_hat += inode.size
            hat_chunks.append(hat)
            has_l = lch[inode] >= 0
            has_r = rch[inode] >= 0
            parents = state_cat([state_take(tcur, local_int[has_l]), state_take(hat, np.nonzero(has_r)[0])])
            x = np.concatenate([np.repeat(_ONEHOT[:1], has_l.sum(), 0), np.repeat(_ONEHOT[1:], has_r.sum(), 0)])
            tcur = self.cell_td(P, torch.as_tensor(x, dtype=dt), parents)
            cur = np.concatenate([lch[inode][has_l], rch[inode][has_r]])
            stages["top_down"] += 1

        # weight chain: embed, Fenwick levels, prefix folds
        wt_init = self._state(P, "wt.init")
        w_all = np.concatenate([p.w for p in plans]) if B else np.zeros(0)
        wt_src = State(wt_init.h[None], wt_init.c[None])
        wpos = {}
        if w_all.size:
            z = torch.as_tensor(self.standardizer.standardize(w_all)[:, None], dtype=dt)
            emb = self._embed(P, z)
            stages["wt_embed"] = 1
            wforest = Forest([p.m for p in plans])
            wbank = wforest.build(emb, lambda a, b: self.wt_cell_row(P, a, b))
            stages["wt_levels"] = wforest.depth
            wq = [(t, k) for t, p in enumerate(plans) for k in range(1, p.m + 1)]
            wfold, stages["wt_fold"] = wforest.prefix(wbank, wq, lambda a, b: self.wt_cell_summary(P, a, b))
            wt_src = state_cat([wt_src, wfold])
            wpos = {q: i + 1 for i, q in enumerate(wq)}

        # decisions and weight heads
        kind = np.concatenate([p.kind for p in plans]) if B else np.zeros(0, np.int64)
        gid = np.concatenate([np.full(p.kind.size, t) for t, p in enumerate(plans)]) if B else np.zeros(0, np.int64)
        topo_ll = torch.zeros(B, dtype=dt)
        wt_ll = torch.zeros(B, dtype=dt)
        if kind.size:
            ref = np.concatenate([np.where(p.kind == NONEMPTY, p.ref + ro, p.ref + no)
                                  for p, ro, no in zip(plans, row_off, node_off)])
            sidx = np.empty(kind.size, dtype=np.int64)
            sel = kind == NONEMPTY
            sidx[sel] = ref[sel]
            sel = (kind == LEFT) | (kind == WEIGHT)
            sidx[sel] = R + top_pos[ref[sel]]
            sel = kind == RIGHT
            sidx[sel] = R + n_top + hat_pos[ref[sel]]
            widx = np.array([0 if k == 0 else wpos[(t, int(k))]
                             for t, p in enumerate(plans) for k in p.k], dtype=np.int64)
            bank = state_cat([rowtop] + top_chunks + hat_chunks)
            hs = self._merge(P, state_take(bank, sidx), state_take(wt_src, widx)).h
            bits = np.concatenate([p.bit for p in plans])
            for kd, head in ((NONEMPTY, self.head_nonempty), (LEFT, self.head_left), (RIGHT, self.head_right)):
                sel = np.nonzero(kind == kd)[0]
                if not sel.size:
                    continue
                logit = head(P, hs[torch.as_tensor(sel)])[:, 0]
                target = torch.as_tensor(bits[sel] == 1)
                lp = torch.where(target, log_sigmoid(logit), log_sigmoid(-logit))
                topo_ll = topo_ll.index_add(0, torch.as_tensor(gid[sel]), lp)
            sel = np.nonzero(kind == WEIGHT)[0]
            if sel.size:
                hw = hs[torch.as_tensor(sel)]
                mu = self.head_mu(P, hw)[:, 0]
                lv = self.head_logvar(P, hw)[:, 0]
                ll = wd.log_density(w_all, mu, lv)
                wt_ll = wt_ll.index_add(0, torch.as_tensor(gid[sel]), ll)

        topo_chain = stages["bottom_up"] + stages["fenwick_levels"] + stages["row_fold"] + stages["top_down"]
        wt_chain = stages["wt_embed"] + stages["wt_levels"] + stages["wt_fold"]
        stages["critical_path"] = max(topo_chain, wt_chain) + (1 if kind.size else 0)
        stages["serial"] = topo_chain + wt_chain + (1 if kind.size else 0)
        return {"topo_ll": topo_ll, "wt_ll": wt_ll, "stages": stages}

    def loss(self, graphs: Sequence[WeightedGraph], lam_w: float = 1.0) -> tuple[torch.Tensor, dict]:
        out = self.forward(graphs)
        loss = -(out["topo_ll"].sum() + lam_w * out["wt_ll"].sum())
        return loss, out

    def graph_log_likelihood(self, g: WeightedGraph) -> float:
        with torch.no_grad():
            out = self.forward([g])
        return float(out["topo_ll"][0] + out["wt_ll"][0])

    def stage_count(self, g: WeightedGraph) -> dict:
        with torch.no_grad():
            return self.forward([g])["stages"]

    # ------------------------------------------------------------ sequential runs

    def runner(self, n: int, backend: str = "numpy", rng: np.random.Generator | None = None,
               guide: WeightedGraph | None = None) -> "_Sequential":
        P = self.store.numpy() if backend == "numpy" else self.store.params
        return _Sequential(self, P, n, rng=rng, guide=guide)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[WeightedGraph, float]:
        """Sample a graph with ``n`` nodes; returns it with the summed log-probability of every draw."""
        run = self.runner(n, "numpy", rng=rng)
        run.run()
        return run.graph(), run.topo_lp + run.wt_lp

    def teacher_forced(self, g: WeightedGraph, backend: str = "torch") -> "_Sequential":
        """Score ``g`` one decision at a time (the sampler's code path with forced outcomes)."""
        run = self.runner(g.n, backend, guide=g)
        run.run()
        return run

    def guided_sample_time_run(self, g: WeightedGraph) -> None:
        """Run the numpy sampler with decisions and weights forced to ``g`` (for timing)."""
        self.runner(g.n, "numpy", guide=g).run()


class _Sequential:
    """Row-by-row generation (numpy or torch parameters), optionally forced to a guide graph."""

    def __init__(self, model: BiggE, P, n: int, rng=None, guide: WeightedGraph | None = None):
        if n < 1:
            raise ValueError("n must be >= 1")
        if guide is not None and guide.n != n:
            raise ValueError("guide graph has a different node count")
        self.model, self.P, self.n, self.rng = model, P, n, rng
        self.torch = isinstance(next(iter(P.values())), torch.Tensor)
        self.guide_rows = guide.rows() if guide is not None else None
        if guide is None and rng is None:
            raise ValueError("sampling needs an rng")
        m = model
        self.topo = FenwickStateTree(lambda a, b: m.cell_row(P, a, b), lambda a, b: m.cell_summary(P, a, b))
        self.wt = FenwickStateTree(lambda a, b: m.wt_cell_row(P, a, b), lambda a, b: m.wt_cell_summary(P, a, b))
        self.h_wt = m._state(P, "wt.init")
        self.empty = m._state(P, "topo.empty")
        self.leaf = m._state(P, "topo.leaf")
        self.edges: list[tuple[int, int, float]] = []
        self.topo_lp = 0.0
        self.wt_lp = 0.0
        self.row_lp: list = [0.0] * n
        self.weight_params: list[tuple] = []
        if self.torch:
            dt = next(iter(P.values())).dtype
            self._onehot = [torch.as_tensor(_ONEHOT[0], dtype=dt), torch.as_tensor(_ONEHOT[1], dtype=dt)]
        else:
            self._onehot = [_ONEHOT[0], _ONEHOT[1]]

    def graph(self) -> WeightedGraph:
        return WeightedGraph(self.n, tuple(self.edges))

    def _decide(self, head, state: State, forced: int | None) -> int:
        hs = self.model._merge(self.P, state, self.h_wt).h
        logit = head(self.P, hs)[0]
        if forced is None:
            bit = int(self.rng.random() < float(sigmoid(logit)))  # numpy backend only
        else:
            bit = forced
        lp = log_sigmoid(logit) if bit else log_sigmoid(-logit)
        self.topo_lp = self.topo_lp + lp
        self.row_lp[self._u] = self.row_lp[self._u] + lp
        return bit

    def _weight(self, top: State, j: int, forced: float | None) -> None:
        m, P = self.model, self.P
        hs = m._merge(P, top, self.h_wt).h
        mu = m.head_mu(P, hs)[0]
        lv = m.head_logvar(P, hs)[0]
        if forced is None:
            w = wd.sample(float(mu), float(lv), self.rng)  # numpy backend only
        else:
            w = forced
        self.wt_lp = self.wt_lp + wd.log_density(w, mu, lv)
        self.weight_params.append((mu, lv))
        self.edges.append((self._u, j, float(w)))
        z = m.standardizer.standardize(w)
        zin = torch.as_tensor([z], dtype=top.h.dtype) if self.torch else np.array([z])
        self.wt.append(m._embed(P, zin))
        self.h_wt = self.wt.prefix_summary()

    def _node(self, lo: int, hi: int, top: State) -> State:
        m, P = self.model, self.P
        if lo == hi:
            forced = None if self._nbrs is None else self._wts[self._nbrs.index(lo)]
            self._weight(top, lo, forced)
            return self.leaf
        mid = split_point(lo, hi)
        f_left = None if self._nbrs is None else int(any(lo <= v < mid for v in self._nbrs))
        has_left = self._decide(m.head_left, top, f_left)
        lbot = self._node(lo, mid - 1, m.cell_td(P, self._onehot[0], top)) if has_left else self.empty
        hat = m.cell_l2r(P, top, lbot)
        if has_left:
            f_right = None if self._nbrs is None else int(any(mid <= v <= hi for v in self._nbrs))
            has_right = self._decide(m.head_right, hat, f_right)
        else:
            has_right = 1
        rbot = self._node(mid, hi, m.cell_td(P, self._onehot[1], hat)) if has_right else self.empty
        return m.cell_bot(P, lbot, rbot)

    def row_state(self, u: int) -> State:
        m, P = self.model, self.P
        s = self.topo.prefix_summary(u - 1) if u >= 2 else m._state(P, "topo.init_row")
        pe = positional_encoding(self.n - u, m.config.hidden)
        if self.torch:
            pe = torch.as_tensor(pe, dtype=s.h.dtype)
        return State(s.h + pe, s.c)

    def run_row(self, u: int) -> None:
        m, P = self.model, self.P
        self._u = u
        if self.guide_rows is not None:
            self._nbrs, self._wts = self.guide_rows[u]
        else:
            self._nbrs, self._wts = None, None
        top = self.row_state(u)
        forced = None if self._nbrs is None else int(bool(self._nbrs))
        if self._decide(m.head_nonempty, top, forced):
            self.topo.append(self._node(0, u - 1, top))
        else:
            self.topo.append(m._state(P, "topo.empty_row"))

    def run(self) -> "_Sequential":
        for u in range(1, self.n):
            self.run_row(u)
        return self
