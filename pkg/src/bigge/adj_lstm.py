"""Adj-LSTM: an LSTM over every lower-triangle entry with a row/column partitioned state.

Entry ``(r, j)`` (``j < r``) reads the concatenation of the current row state
and the stored state of column ``j``; the heads give the edge probability
and, for edges, the softplus-normal weight parameters. The entry is then
embedded as ``[E[e], f_w(e * z), Pos(n - r), Pos(n + j)]`` (``z`` the
standardized weight) and a stacked LSTM updates the pair. The updated halves
become the new row state and the new state of column ``j``.

Each LSTM layer splits its preactivations by half:

    z_R = U_R x + V_RR h_R + V_RC h_C + b_R
    z_C = U_C x + V_CR h_R + V_CC h_C + b_C

With ``joint=False`` the cross blocks ``V_RC`` and ``V_CR`` (and, above the
first layer, the input cross blocks ``U_RC`` and ``U_CR``) do not exist, so
rows and columns evolve independently. Adding an exact zero is the identity
in floating point, so a joint model whose cross blocks are zero produces
bitwise the same numbers.

A row starts from the final state of the previous row plus ``Pos(n - r)``
on the hidden vectors; the first row starts from a learned state, and every
column starts from a learned state.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch

from . import weights as wd
from .graph import WeightedGraph
from .nn import MLP, ParameterStore, State, log_sigmoid, lstm_gates, positional_encoding, sigmoid, _uniform

__all__ = ["AdjLstmConfig", "AdjLstm"]


@dataclass(frozen=True)
class AdjLstmConfig:
    hidden: int = 128
    layers: int = 2
    edge_emb: int = 32
    wt_emb: int = 16
    pos_dim: int = 16
    head_hidden: int = 0
    joint: bool = True
    wt_mean: float = 0.0
    wt_sd: float = 1.0

    def __post_init__(self):
        if min(self.hidden, self.layers, self.edge_emb, self.wt_emb, self.pos_dim) < 1:
            raise ValueError("dimensions must be positive")

    @property
    def in_dim(self) -> int:
        return self.edge_emb + self.wt_emb + 2 * self.pos_dim

    @property
    def head_width(self) -> int:
        return self.head_hidden or 2 * self.hidden

    def to_dict(self) -> dict:
        return asdict(self)


def _cross(name: str) -> bool:
    tail = name.rsplit(".", 1)[-1]
    return tail in ("V_RC", "V_CR", "U_RC", "U_CR")


class AdjLstm:
    def __init__(self, config: AdjLstmConfig, store: ParameterStore | None = None, seed: int = 0,
                 dtype: torch.dtype = torch.float64):
        self.config = config
        c = config
        d = c.hidden
        self.f_w = MLP("adj.f_w", (1, c.wt_emb))
        self.head_p = MLP("adj.head_p", (2 * d, c.head_width, 1))
        self.head_mu = MLP("wt.head_mu", (2 * d, c.head_width, 1))
        self.head_logvar = MLP("wt.head_logvar", (2 * d, c.head_width, 1))
        self.standardizer = wd.WeightStandardizer(c.wt_mean, c.wt_sd)
        if store is None:
            store = ParameterStore(dtype)
            rng = np.random.default_rng(seed)
            store.add("adj.E", rng.uniform(-1.0, 1.0, (2, c.edge_emb)))
            self.f_w.init(store, rng)
            for layer in range(c.layers):
                pre = f"adj.l{layer}"
                if layer == 0:
                    store.add(f"{pre}.U_R", _uniform(rng, (4 * d, c.in_dim), c.in_dim))
                    store.add(f"{pre}.U_C", _uniform(rng, (4 * d, c.in_dim), c.in_dim))
                else:
                    for blk in ("U_RR", "U_RC", "U_CR", "U_CC"):
                        if c.joint or not _cross(blk):
                            store.add(f"{pre}.{blk}", _uniform(rng, (4 * d, d), 2 * d))
                for blk in ("V_RR", "V_RC", "V_CR", "V_CC"):
                    if c.joint or not _cross(blk):
                        store.add(f"{pre}.{blk}", _uniform(rng, (4 * d, d), 2 * d))
                for half in ("R", "C"):
                    b = np.zeros(4 * d)
                    b[d:2 * d] = 1.0
                    store.add(f"{pre}.b_{half}", b)
            bound = 1.0 / math.sqrt(d)
            for name in ("adj.row_init", "adj.col_init"):
                for layer in range(c.layers):
                    store.add(f"{name}.l{layer}.h", rng.uniform(-bound, bound, d))
                    store.add(f"{name}.l{layer}.c", rng.uniform(-bound, bound, d))
            for head in (self.head_p, self.head_mu, self.head_logvar):
                head.init(store, rng)
        self.store = store

    @staticmethod
    def is_weight_param(name: str) -> bool:
        return name.startswith("wt.") or name.startswith("adj.f_w")

    def init_weight_heads(self, w: np.ndarray) -> None:
        w = np.asarray(w, dtype=np.float64)
        if w.size == 0:
            return
        z = np.atleast_1d(wd.inverse_softplus(w))
        last = self.head_mu.depth - 1
        self.store.set_value(f"wt.head_mu.b{last}", [float(z.mean())])
        var = float(z.var()) if z.size > 1 else 1.0
        self.store.set_value(f"wt.head_logvar.b{last}", [math.log(max(var, 1e-6))])

    # ------------------------------------------------------------ core update

    def _layer(self, P, layer: int, x, xr, xc, row: State, col: State) -> tuple[State, State]:
        pre = f"adj.l{layer}"
        joint = self.config.joint
        if layer == 0:
            zr = x @ P[f"{pre}.U_R"].T
            zc = x @ P[f"{pre}.U_C"].T
        else:
            zr = xr @ P[f"{pre}.U_RR"].T
            zc = xc @ P[f"{pre}.U_CC"].T
            if joint:
                zr = zr + xc @ P[f"{pre}.U_RC"].T
                zc = zc + xr @ P[f"{pre}.U_CR"].T
        zr = zr + row.h @ P[f"{pre}.V_RR"].T
        zc = zc + col.h @ P[f"{pre}.V_CC"].T
        if joint:
            zr = zr + col.h @ P[f"{pre}.V_RC"].T
            zc = zc + row.h @ P[f"{pre}.V_CR"].T
        return lstm_gates(zr + P[f"{pre}.b_R"], row.c), lstm_gates(zc + P[f"{pre}.b_C"], col.c)

    def _update(self, P, x, rows: list[State], cols: list[State]) -> tuple[list[State], list[State]]:
        new_r, new_c = [], []
        xr = xc = None
        for layer in range(self.config.layers):
            r, c = self._layer(P, layer, x, xr, xc, rows[layer], cols[layer])
            new_r.append(r)
            new_c.append(c)
            xr, xc = r.h, c.h
        return new_r, new_c

    def _embed_inputs(self, n: np.ndarray, r: np.ndarray, j: np.ndarray, e: np.ndarray, z: np.ndarray):
        """Numpy parts of the entry embedding: positional codes and the edge-weight product."""
        pd = self.config.pos_dim
        pos = np.concatenate([positional_encoding(n - r, pd), positional_encoding(n + j, pd)], axis=-1)
        return pos, (e * z)[..., None]

    def _init_states(self, P, name: str, batch: int | None, add_pe=None) -> list[State]:
        out = []
        for layer in range(self.config.layers):
            h, c = P[f"{name}.l{layer}.h"], P[f"{name}.l{layer}.c"]
            if batch is not None:
                if isinstance(h, torch.Tensor):
                    h, c = h.expand(batch, -1), c.expand(batch, -1)
                else:
                    h, c = np.broadcast_to(h, (batch, h.size)), np.broadcast_to(c, (batch, c.size))
            out.append(State(h, c))
        return out

    # ------------------------------------------------------------ batched scorer

    def forward(self, graphs: Sequence[WeightedGraph]) -> dict:
        """Teacher-forced log-likelihoods; graphs run in lockstep, padded to the largest ``n``."""
        P = self.store.params
        dt = self.store.dtype
        c = self.config
        d = c.hidden
        B = len(graphs)
        ns = np.array([g.n for g in graphs], dtype=np.int64)
        N = int(ns.max(initial=1))
        topo_ll = torch.zeros(B, dtype=dt)
        wt_ll = torch.zeros(B, dtype=dt)
        if N < 2:
            return {"topo_ll": topo_ll, "wt_ll": wt_ll, "entries": 0}
        # dense adjacency per graph, padded
        A = np.zeros((B, N, N))
        for b, g in enumerate(graphs):
            for i, j, w in g.edges:
                A[b, i, j] = w
        rr, jj = np.tril_indices(N, -1)  # row-major order: (1,0), (2,0), (2,1), ...
        T = rr.size
        W = A[:, rr, jj].T  # (T, B)
        E = (W > 0).astype(np.int64)
        mask = rr[:, None] < ns[None, :]
        Z = np.where(E == 1, self.standardizer.standardize(np.where(E == 1, W, 0.0)), 0.0)
        # padded entries (r >= n) are masked out of the loss; clip their positions to stay valid
        pos, ez = self._embed_inputs(np.maximum(ns[None, :], rr[:, None]), rr[:, None], jj[:, None], E, Z)
        x_all = torch.cat([
            P["adj.E"][torch.as_tensor(E)],
            self.f_w(P, torch.as_tensor(ez, dtype=dt)),
            torch.as_tensor(pos, dtype=dt),
        ], dim=-1)  # (T, B, in)

        row_init = self._init_states(P, "adj.row_init", B)
        col_init = self._init_states(P, "adj.col_init", B)
        cols: list[list[State] | None] = [None] * N
        rows = row_init
        hs = []
        t = 0
        for r in range(N):
            pe = torch.as_tensor(positional_encoding(np.maximum(ns - r, 0), d), dtype=dt)
            rows = [State(s.h + pe, s.c) for s in rows]
            for j in range(r):
                if cols[j] is None:
                    cols[j] = col_init
                hs.append(torch.cat([rows[-1].h, cols[j][-1].h], dim=-1))
                rows, cols[j] = self._update(P, x_all[t], rows, cols[j])
                t += 1
        H = torch.stack(hs)  # (T, B, 2d)
        logit = self.head_p(P, H)[..., 0]
        e_t = torch.as_tensor(E == 1)
        m_t = torch.as_tensor(mask)
        lp = torch.where(e_t, log_sigmoid(logit), log_sigmoid(-logit))
        topo_ll = torch.where(m_t, lp, torch.zeros_like(lp)).sum(0)
        sel = np.nonzero((E == 1) & mask)
        if sel[0].size:
            hsel = H[torch.as_tensor(sel[0]), torch.as_tensor(sel[1])]
            mu = self.head_mu(P, hsel)[:, 0]
            lv = self.head_logvar(P, hsel)[:, 0]
            ll = wd.log_density(W[sel], mu, lv)
            wt_ll = wt_ll.index_add(0, torch.as_tensor(sel[1]), ll)
        return {"topo_ll": topo_ll, "wt_ll": wt_ll, "entries": int(mask.sum())}

    def loss(self, graphs: Sequence[WeightedGraph], lam_w: float = 1.0) -> tuple[torch.Tensor, dict]:
        out = self.forward(graphs)
        return -(out["topo_ll"].sum() + lam_w * out["wt_ll"].sum()), out

    def graph_log_likelihood(self, g: WeightedGraph) -> float:
        with torch.no_grad():
            out = self.forward([g])
        return float(out["topo_ll"][0] + out["wt_ll"][0])

    # ------------------------------------------------------------ sampler

    def sample(self, n: int, rng: np.random.Generator | None = None,
               guide: WeightedGraph | None = None) -> tuple[WeightedGraph, float]:
        """Entry-by-entry sampling with numpy parameters; ``guide`` forces every outcome."""
        if n < 1:
            raise ValueError("n must be >= 1")
        P = self.store.numpy()
        c = self.config
        d = c.hidden
        adj = None
        if guide is not None:
            adj = {(i, j): w for i, j, w in guide.edges}
        E = P["adj.E"]
        cols: list[list[State] | None] = [None] * n
        rows = self._init_states(P, "adj.row_init", None)
        col_init = self._init_states(P, "adj.col_init", None)
        edges = []
        lp = 0.0
        entries = 0
        for r in range(n):
            pe = positional_encoding(n - r, d)
            rows = [State(s.h + pe, s.c) for s in rows]
            for j in range(r):
                if cols[j] is None:
                    cols[j] = col_init
                h = np.concatenate([rows[-1].h, cols[j][-1].h])
                logit = self.head_p(P, h)[0]
                if adj is None:
                    e = int(rng.random() < float(sigmoid(logit)))
                else:
                    e = int((r, j) in adj)
                lp += float(log_sigmoid(logit) if e else log_sigmoid(-logit))
                z = 0.0
                if e:
                    mu = float(self.head_mu(P, h)[0])
                    lv = float(self.head_logvar(P, h)[0])
                    w = wd.sample(mu, lv, rng) if adj is None else adj[(r, j)]
                    lp += float(wd.log_density(w, mu, lv))
                    edges.append((r, j, float(w)))
                    z = self.standardizer.standardize(w)
                pos, ez = self._embed_inputs(np.int64(n), np.int64(r), np.int64(j), np.float64(e), np.float64(z))
                x = np.concatenate([E[e], self.f_w(P, ez), pos])
                rows, cols[j] = self._update(P, x, rows, cols[j])
                entries += 1
        self.last_entries = entries
        return WeightedGraph(n, tuple(edges)), lp
