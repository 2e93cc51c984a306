"""Demand generation, arrival streams and trace ingestion tests."""

from __future__ import annotations

import numpy as np
import pytest

from pcnsim import (
    ParseError,
    PathTable,
    TransactionBatch,
    UnknownEndpoint,
    check_capacity_region,
    check_circulation,
    gen_arrivals,
    gen_demand_matrix,
    load_trace,
    scale_to_capacity,
)
from pcnsim.workload import load_transactions_csv, save_transactions_csv

from conftest import random_connected_graph


def test_two_agent_matrix_is_forced_symmetric():
    dm = gen_demand_matrix(2, 3.0, np.random.default_rng(0))
    (a, b) = dm.nodes()
    assert dm.rate(a, b) == pytest.approx(1.5)
    assert dm.rate(b, a) == pytest.approx(1.5)


def test_generated_matrix_is_circulation():
    rng = np.random.default_rng(1)
    for n in (3, 5, 8):
        dm = gen_demand_matrix(n, 2.5, rng)
        assert check_circulation(dm, tol=1e-8)
        assert dm.total_rate() == pytest.approx(2.5)


def test_row_and_column_sums_agree_tightly():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        dm = gen_demand_matrix(5, 1.0, rng)
        out: dict[str, float] = {}
        inc: dict[str, float] = {}
        for (i, j), lam in dm.rates.items():
            out[i] = out.get(i, 0.0) + lam
            inc[j] = inc.get(j, 0.0) + lam
        worst = max(worst, max(abs(out[n] - inc[n]) for n in out))
    assert worst < 1e-8


def test_generated_matrix_deterministic_under_seed():
    d1 = gen_demand_matrix(4, 1.0, np.random.default_rng(42))
    d2 = gen_demand_matrix(4, 1.0, np.random.default_rng(42))
    assert d1.rates == d2.rates


def test_arrivals_empty_for_zero_demand():
    from pcnsim import DemandMatrix

    batch = gen_arrivals(DemandMatrix({}), 0, np.random.default_rng(0))
    assert batch.entries == ()


def test_arrivals_poisson_mean():
    from pcnsim import DemandMatrix

    dm = DemandMatrix({("1", "2"): 2.0})
    rng = np.random.default_rng(3)
    total = sum(
        gen_arrivals(dm, t, rng).offered_volume() for t in range(100_000)
    )
    assert abs(total / 100_000 - 2.0) < 0.03


def test_arrivals_are_positive_integers():
    from pcnsim import DemandMatrix

    dm = DemandMatrix({("1", "2"): 0.7, ("2", "1"): 1.3})
    rng = np.random.default_rng(4)
    for t in range(500):
        for i, j, amount in gen_arrivals(dm, t, rng).entries:
            assert isinstance(amount, int) and amount >= 1


def test_arrivals_deterministic_under_seed():
    from pcnsim import DemandMatrix

    dm = DemandMatrix({("1", "2"): 0.7, ("2", "1"): 1.3})
    b1 = [gen_arrivals(dm, t, np.random.default_rng(9)).entries for t in range(50)]
    b2 = [gen_arrivals(dm, t, np.random.default_rng(9)).entries for t in range(50)]
    # same generator consumed identically across two fresh streams
    assert b1[0] == b2[0]


def test_batch_validation():
    with pytest.raises(ValueError):
        TransactionBatch(0, (("A", "A", 1),))
    with pytest.raises(ValueError):
        TransactionBatch(0, (("A", "B", 0),))


def test_trace_filter_by_cap(tmp_path):
    topo = tmp_path / "topo.csv"
    topo.write_text("u,v,capacity\nA,B,500\nB,C,500\n")
    txns = tmp_path / "txns.csv"
    txns.write_text("src,dst,amount\nA,C,100\nC,A,501\nA,B,500\n")
    graph, trace = load_trace(topo, txns, amount_cap=500)
    assert [a for _i, _j, a in trace.entries] == [100, 500]
    assert trace.dropped == 1
    stats = trace.summary()
    assert stats["count"] == 2 and stats["max"] == 500
    assert stats["mean"] == pytest.approx(300.0)


def test_trace_empty_file(tmp_path):
    topo = tmp_path / "topo.csv"
    topo.write_text("A,B,5\n")
    txns = tmp_path / "txns.csv"
    txns.write_text("src,dst,amount\n")
    _g, trace = load_trace(topo, txns)
    assert trace.entries == [] and trace.summary()["count"] == 0


def test_trace_unknown_endpoint(tmp_path):
    topo = tmp_path / "topo.csv"
    topo.write_text("A,B,5\n")
    txns = tmp_path / "txns.csv"
    txns.write_text("A,Z,3\n")
    with pytest.raises(UnknownEndpoint):
        load_trace(topo, txns)


def test_trace_parse_error_carries_line(tmp_path):
    txns = tmp_path / "txns.csv"
    txns.write_text("A,B,3\nA,B\n")
    with pytest.raises(ParseError) as err:
        load_transactions_csv(txns)
    assert err.value.lineno == 2


def test_trace_zero_value_discarded(tmp_path):
    txns = tmp_path / "txns.csv"
    txns.write_text("A,B,0\nA,B,2\n")
    trace = load_transactions_csv(txns)
    assert [a for _i, _j, a in trace.entries] == [2]


def test_trace_filter_idempotent_and_order_preserving(tmp_path):
    txns = tmp_path / "txns.csv"
    txns.write_text("A,B,3\nB,A,7\nA,B,1\n")
    trace = load_transactions_csv(txns, amount_cap=10)
    save_transactions_csv(trace, tmp_path / "again.csv")
    trace2 = load_transactions_csv(tmp_path / "again.csv", amount_cap=10)
    assert trace2.entries == trace.entries


def test_trace_batches_one_per_slot(tmp_path):
    txns = tmp_path / "txns.csv"
    txns.write_text("A,B,3\nB,A,7\n")
    trace = load_transactions_csv(txns)
    batches = list(trace.batches())
    assert len(batches) == 2
    assert batches[0].entries == (("A", "B", 3),)
    assert batches[1].t == 1


def test_trace_slot_column_groups(tmp_path):
    txns = tmp_path / "txns.csv"
    txns.write_text("src,dst,amount,slot\nA,B,3,0\nB,A,7,0\nA,B,1,2\n")
    trace = load_transactions_csv(txns)
    batches = list(trace.batches())
    assert len(batches) == 3
    assert len(batches[0]) == 2
    assert batches[1].entries == ()
    assert batches[2].entries == (("A", "B", 1),)


def test_trace_shuffle_is_seeded_permutation(tmp_path):
    txns = tmp_path / "txns.csv"
    txns.write_text("A,B,1\nB,A,2\nA,B,3\nB,A,4\n")
    trace = load_transactions_csv(txns)
    s1 = trace.shuffled(np.random.default_rng(5))
    s2 = trace.shuffled(np.random.default_rng(5))
    assert s1.entries == s2.entries
    assert sorted(s1.entries) == sorted(trace.entries)


def test_scale_to_capacity_lands_inside_region():
    rng = np.random.default_rng(21)
    g = random_connected_graph(5, 3, rng, cap_low=2, cap_high=5)
    table = PathTable(g, max_hops=3)
    dm = gen_demand_matrix(g.n_vertices, 10.0, rng, vertices=g.vertices)
    scaled = scale_to_capacity(dm, g, table, utilization=0.95)
    assert check_capacity_region(scaled, g, table).feasible
    # pushing past the boundary must leave the region
    outside = scale_to_capacity(dm, g, table, utilization=1.2)
    assert not check_capacity_region(outside, g, table).feasible
