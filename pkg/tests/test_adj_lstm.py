import itertools
import math

import numpy as np
import pytest
import torch

from bigge.adj_lstm import AdjLstm, AdjLstmConfig
from bigge.graph import WeightedGraph
from bigge.nn import ParameterStore, grad_check

from conftest import random_graph


def model(seed=0, **kw):
    return AdjLstm(AdjLstmConfig(**{"hidden": 6, "edge_emb": 4, "wt_emb": 3, "pos_dim": 4, **kw}), seed=seed)


def _zero_all(m):
    for name in m.store.names():
        m.store.set_value(name, np.zeros(m.store[name].shape))


def test_single_node():
    m = model()
    assert m.graph_log_likelihood(WeightedGraph(1)) == 0.0
    g, lp = m.sample(1, np.random.default_rng(0))
    assert g.m == 0 and lp == 0.0


def test_zero_params_half_probability():
    m = model()
    _zero_all(m)
    for edges in ((), ((1, 0, 1.0),), ((1, 0, 1.0), (2, 0, 0.5), (2, 1, 2.0))):
        out = m.forward([WeightedGraph(3, edges)])
        assert float(out["topo_ll"][0].detach()) == pytest.approx(3 * math.log(0.5), abs=1e-14)


def test_topology_enumeration_n3():
    m = model(4)
    w = {(1, 0): 0.8, (2, 0): 1.7, (2, 1): 0.4}
    total = 0.0
    for mask in itertools.product([0, 1], repeat=3):
        edges = tuple((i, j, w[(i, j)]) for (i, j), keep in zip(sorted(w), mask) if keep)
        total += math.exp(float(m.forward([WeightedGraph(3, edges)])["topo_ll"][0].detach()))
    assert total == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("seed", range(4))
def test_sampler_matches_scorer(seed):
    m = model(seed)
    g, lp = m.sample(9, np.random.default_rng(seed))
    assert m.last_entries == 9 * 8 // 2
    assert lp == pytest.approx(m.graph_log_likelihood(g), abs=1e-9)


def test_guided_sampler_reproduces_graph():
    m = model(1)
    g = random_graph(7, 0.4, np.random.default_rng(1))
    h, lp = m.sample(7, guide=g)
    assert h == g and lp == pytest.approx(m.graph_log_likelihood(g), abs=1e-9)


def test_batch_equals_sum_of_singles():
    m = model(2)
    rng = np.random.default_rng(2)
    batch = [random_graph(n, 0.4, rng) for n in (3, 7, 5)]
    out = m.forward(batch)
    assert out["entries"] == 3 + 21 + 10
    for k, g in enumerate(batch):
        single = m.forward([g])
        assert float(out["topo_ll"][k].detach()) == pytest.approx(float(single["topo_ll"][0].detach()), abs=1e-12)


def test_negative_infinite_bias_gives_empty_graph():
    m = model(3)
    m.store.set_value("adj.head_p.b1", [-np.inf])
    g, lp = m.sample(10, np.random.default_rng(0))
    assert g.m == 0 and lp == 0.0


def _independent_copy(joint: AdjLstm) -> AdjLstm:
    cfg = AdjLstmConfig(**{**joint.config.to_dict(), "joint": False})
    store = ParameterStore()
    for name in joint.store.names():
        if name.rsplit(".", 1)[-1] not in ("V_RC", "V_CR", "U_RC", "U_CR"):
            store.add(name, joint.store[name].detach().numpy())
    return AdjLstm(cfg, store=store)


def test_independent_equals_zeroed_cross_blocks():
    joint = model(5)
    for name in joint.store.names():
        if name.rsplit(".", 1)[-1] in ("V_RC", "V_CR", "U_RC", "U_CR"):
            joint.store.set_value(name, np.zeros(joint.store[name].shape))
    indep = _independent_copy(joint)
    g = random_graph(8, 0.4, np.random.default_rng(5))
    a, b = joint.forward([g]), indep.forward([g])
    assert torch.equal(a["topo_ll"], b["topo_ll"]) and torch.equal(a["wt_ll"], b["wt_ll"])
    ga, la = joint.sample(8, np.random.default_rng(9))
    gb, lb = indep.sample(8, np.random.default_rng(9))
    assert ga == gb and la == lb


def test_independent_has_no_cross_storage():
    m = model(0, joint=False)
    assert not any(n.endswith(("V_RC", "V_CR", "U_RC", "U_CR")) for n in m.store.names())


def test_joint_cross_blocks_matter():
    joint = model(6)
    g = random_graph(6, 0.5, np.random.default_rng(6))
    before = float(joint.forward([g])["topo_ll"][0].detach())
    joint.store.set_value("adj.l0.V_RC", np.zeros(joint.store["adj.l0.V_RC"].shape))
    assert float(joint.forward([g])["topo_ll"][0].detach()) != before


@pytest.mark.parametrize("n", [4, 5])
def test_gradients(n):
    m = model(7)
    g = random_graph(n, 0.5, np.random.default_rng(n))
    rep = grad_check(lambda: m.loss([g], 1.0)[0], m.store, coords=16)
    assert rep["passed"], rep["max_rel_err"]


def test_weight_group():
    assert AdjLstm.is_weight_param("adj.f_w.w0")
    assert AdjLstm.is_weight_param("wt.head_mu.b1")
    assert not AdjLstm.is_weight_param("adj.head_p.w0")
