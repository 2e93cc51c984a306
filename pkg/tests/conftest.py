"""Shared fixtures and instance builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from pcnsim import PaymentGraph, build_graph


@pytest.fixture
def two_node() -> PaymentGraph:
    return build_graph([("A", "B", 1)])


@pytest.fixture
def line() -> PaymentGraph:
    return build_graph([("A", "B", 5), ("B", "C", 3)])


@pytest.fixture
def triangle() -> PaymentGraph:
    return build_graph([("A", "B", 5), ("B", "C", 5), ("A", "C", 5)])


@pytest.fixture
def square() -> PaymentGraph:
    # 4-cycle A-B-C-D-A
    return build_graph([("A", "B", 4), ("B", "C", 4), ("C", "D", 4), ("D", "A", 4)])


def random_connected_graph(
    n: int,
    extra_edges: int,
    rng: np.random.Generator,
    cap_low: int = 2,
    cap_high: int = 10,
) -> PaymentGraph:
    """Random tree plus extra channels; always connected."""
    names = [f"n{k:03d}" for k in range(n)]
    channels: dict[frozenset, int] = {}
    for k in range(1, n):
        parent = int(rng.integers(0, k))
        channels[frozenset((names[parent], names[k]))] = int(
            rng.integers(cap_low, cap_high + 1)
        )
    attempts = 0
    while len(channels) < n - 1 + extra_edges and attempts < 50 * extra_edges:
        attempts += 1
        a, b = rng.integers(0, n, size=2)
        if a == b:
            continue
        key = frozenset((names[int(a)], names[int(b)]))
        if key in channels:
            continue
        channels[key] = int(rng.integers(cap_low, cap_high + 1))
    return build_graph(
        [(min(pair), max(pair), cap) for pair, cap in
         ((tuple(sorted(k)), v) for k, v in channels.items())]
    )


def brute_force_paths(graph: PaymentGraph, i: str, j: str, max_hops: int) -> set:
    """Independent loopless-path oracle: plain recursive search, no pruning."""
    out: set[tuple[str, ...]] = set()

    def walk(path: list[str]) -> None:
        here = path[-1]
        if here == j:
            out.add(tuple(path))
            return
        if len(path) - 1 >= max_hops:
            return
        for nxt in graph.neighbors[here]:
            if nxt not in path:
                walk(path + [nxt])

    walk([i])
    return out
