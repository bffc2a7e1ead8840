from __future__ import annotations

import numpy as np
import pytest
import torch
from hypothesis import strategies as st

from bigge.graph import WeightedGraph

torch.set_num_threads(1)  # ops here are small; extra threads only add contention


@st.composite
def weighted_graphs(draw, max_n: int = 12, min_n: int = 1):
    n = draw(st.integers(min_n, max_n))
    pairs = [(i, j) for i in range(n) for j in range(i)]
    mask = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    weights = st.floats(1e-6, 1e3, allow_nan=False, allow_infinity=False)
    edges = [(i, j, draw(weights)) for (i, j), keep in zip(pairs, mask) if keep]
    return WeightedGraph(n, tuple(edges))


def random_graph(n: int, p: float, rng: np.random.Generator) -> WeightedGraph:
    edges = [(i, j, float(rng.uniform(0.2, 2.0))) for i in range(n) for j in range(i) if rng.random() < p]
    return WeightedGraph(n, tuple(edges))


def path(n: int, w: float = 1.0) -> WeightedGraph:
    return WeightedGraph(n, tuple((i, i - 1, w) for i in range(1, n)))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


# one line per acceptance criterion, repeated in the terminal summary
VERDICTS: list[str] = []


def verdict(criterion: int, title: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion:>2} {title}: {detail}"
    VERDICTS.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
