import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bigge.fenwick import (
    FenwickStateTree,
    Forest,
    blocks,
    build_levels,
    prefix_summaries,
    state_cat,
    stored_states,
)
from bigge.nn import ParameterStore, State, TreeLSTMCell

D = 4


def cells(seed=0):
    store = ParameterStore()
    rng = np.random.default_rng(seed)
    merge, summ = TreeLSTMCell("m", D), TreeLSTMCell("s", D)
    merge.init(store, rng)
    summ.init(store, rng)
    P = store.numpy()
    return (lambda a, b: merge(P, a, b)), (lambda a, b: summ(P, a, b))


def leaves(k, seed=1):
    r = np.random.default_rng(seed)
    return State(r.normal(size=(k, D)), r.normal(size=(k, D)))


def row(s, k):
    return State(s.h[k], s.c[k])


# symbolic cells: states are strings, merges record their operands
def sym_merge(a, b):
    return State(f"M({a.h},{b.h})", "")


def sym_summary(a, b):
    return State(f"S({a.h},{b.h})", "")


def test_blocks_examples():
    assert blocks(1) == [(0, 1, (1, 1))]
    assert blocks(6) == [(1, 3, (5, 6)), (2, 1, (1, 4))]
    assert blocks(13) == [(0, 13, (13, 13)), (2, 3, (9, 12)), (3, 1, (1, 8))]
    with pytest.raises(ValueError):
        blocks(0)


def test_blocks_partition_up_to_4096():
    for k in range(1, 4097):
        covered = []
        for _, _, (a, b) in blocks(k):
            covered.extend(range(a, b + 1))
        assert sorted(covered) == list(range(1, k + 1)), k
        assert len(covered) == k


def test_append_counts():
    t = FenwickStateTree(sym_merge, sym_summary)
    merges = [t.append(State(str(k), "")) for k in range(1, 9)]
    assert merges[0] == 0 and t.levels and merges[-1] == 3
    assert merges == [0, 1, 0, 2, 0, 1, 0, 3]


def test_stored_after_six():
    t = FenwickStateTree(sym_merge, sym_summary)
    for k in range(6):
        t.append(State(str(k + 1), ""))
    assert t.stored() == 10 == stored_states(6)


def test_structure_invariants_up_to_512():
    t = FenwickStateTree(sym_merge, sym_summary)
    for k in range(1, 513):
        t.append(State(str(k), ""))
        assert t.stored() == 2 * k - bin(k).count("1")
        for i, level in enumerate(t.levels):
            assert len(level) == k >> i
    assert t.node(1, 2).h == "M(3,4)"
    assert t.node(2, 1).h == "M(M(1,2),M(3,4))"


def test_prefix_summary_examples():
    t = FenwickStateTree(sym_merge, sym_summary)
    for k in range(1, 8):
        t.append(State(str(k), ""))
    assert t.prefix_summary(4).h == "M(M(1,2),M(3,4))"
    assert t.prefix_summary(6).h == "S(M(5,6),M(M(1,2),M(3,4)))"
    assert t.prefix_summary(7).h == "S(S(7,M(5,6)),M(M(1,2),M(3,4)))"
    with pytest.raises(ValueError):
        FenwickStateTree(sym_merge, sym_summary).prefix_summary()


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 5000))
def test_summary_merge_count(k):
    t = FenwickStateTree(sym_merge, sym_summary)
    t.count = k
    t.levels = [[State("x", "")] * (k >> i) for i in range(k.bit_length())]
    assert t.prefix_summary().h.count("S(") == bin(k).count("1") - 1


def test_append_dimension_mismatch():
    merge, summ = cells()
    t = FenwickStateTree(merge, summ)
    t.append(State(np.zeros(D), np.zeros(D)))
    with pytest.raises(ValueError):
        t.append(State(np.zeros(D + 1), np.zeros(D + 1)))


@pytest.mark.parametrize("k", [1, 2, 5, 8, 13, 64, 100])
def test_batched_equals_incremental(k):
    merge, summ = cells()
    lv = leaves(k)
    inc = FenwickStateTree(merge, summ)
    incremental_prefix = []
    for q in range(k):
        inc.append(row(lv, q))
        incremental_prefix.append(inc.prefix_summary())
    levels = build_levels(lv, merge)
    for i, level in enumerate(levels):
        for j in range(level.h.shape[0]):
            ref = inc.node(i, j + 1)
            assert np.max(np.abs(level.h[j] - ref.h)) <= 1e-12
            assert np.max(np.abs(level.c[j] - ref.c)) <= 1e-12
    batched = prefix_summaries(levels, list(range(1, k + 1)), summ)
    for q in range(k):
        assert np.max(np.abs(batched.h[q] - incremental_prefix[q].h)) <= 1e-12


def test_rebuild_from_scratch_is_identical():
    merge, summ = cells(3)
    lv = leaves(37, 4)
    a, b = FenwickStateTree(merge, summ), FenwickStateTree(merge, summ)
    for q in range(37):
        a.append(row(lv, q))
    for q in range(37):
        b.append(row(lv, q))
    assert np.array_equal(a.prefix_summary().h, b.prefix_summary().h)


def test_forest_matches_individual_trees():
    merge, summ = cells(5)
    sizes = [5, 0, 9, 1, 16]
    lv = leaves(sum(sizes), 6)
    forest = Forest(sizes)
    bank = forest.build(lv, merge)
    queries = [(t, c) for t, s in enumerate(sizes) for c in range(1, s + 1)]
    out, steps = forest.prefix(bank, queries, summ)
    assert steps == max(bin(c).count("1") for _, c in queries) - 1
    start = np.concatenate([[0], np.cumsum(sizes)])
    for q, (t, c) in enumerate(queries):
        tree = FenwickStateTree(merge, summ)
        for k in range(c):
            tree.append(row(lv, start[t] + k))
        assert np.max(np.abs(out.h[q] - tree.prefix_summary().h)) <= 1e-12
    assert forest.depth == 4


def test_state_cat_torch_and_numpy():
    import torch

    a = State(np.ones((1, 2)), np.zeros((1, 2)))
    assert state_cat([a, a]).h.shape == (2, 2)
    t = State(torch.ones(1, 2), torch.zeros(1, 2))
    assert state_cat([t, t]).h.shape == (2, 2)
