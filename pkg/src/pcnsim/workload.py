"""Demand-matrix generation, arrival streams and trace ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from statistics import median
from typing import Iterator, Sequence

import numpy as np

from .fluid import DemandMatrix, check_capacity_region
from .topology import PathTable, PaymentGraph, load_topology_csv


class ParseError(ValueError):
    def __init__(self, path, lineno: int, message: str) -> None:
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class UnknownEndpoint(ValueError):
    pass


@dataclass(frozen=True)
class TransactionBatch:
    """Integer-valued payment requests arriving in one time slot."""

    t: int
    entries: tuple[tuple[str, str, int], ...]

    def __post_init__(self) -> None:
        for i, j, amount in self.entries:
            if i == j:
                raise ValueError(f"transaction from {i!r} to itself")
            if amount < 1:
                raise ValueError("transaction amounts must be >= 1")

    def offered_volume(self) -> int:
        return int(sum(a for _i, _j, a in self.entries))

    def __len__(self) -> int:
        return len(self.entries)


def gen_demand_matrix(
    n: int,
    total_rate: float,
    rng: np.random.Generator,
    vertices: Sequence[str] | None = None,
) -> DemandMatrix:
    """Random zero-diagonal matrix with all row and column sums equal.

    Built by iterative proportional fitting of a random positive matrix
    (off-diagonal), then scaled so the grand sum equals total_rate. Every
    output satisfies the circulation condition by construction. Variances
    are left at their Poisson default (equal to the rates).
    """
    if n < 2:
        raise ValueError("need at least two agents")
    if total_rate < 0:
        raise ValueError("total_rate must be >= 0")
    if vertices is None:
        width = len(str(n - 1))
        vertices = [f"v{k:0{width}d}" for k in range(n)]
    elif len(vertices) != n:
        raise ValueError("vertex list length differs from n")

    w = rng.uniform(0.5, 1.5, size=(n, n))
    np.fill_diagonal(w, 0.0)
    # Sinkhorn to unit row/column sums; the zero diagonal is preserved.
    for _ in range(10000):
        w *= (1.0 / w.sum(axis=1))[:, None]
        w *= 1.0 / w.sum(axis=0)
        row_err = np.abs(w.sum(axis=1) - 1.0).max()
        col_err = np.abs(w.sum(axis=0) - 1.0).max()
        if max(row_err, col_err) < 1e-12:
            break
    w *= total_rate / n

    rates = {
        (vertices[a], vertices[b]): float(w[a, b])
        for a in range(n)
        for b in range(n)
        if a != b
    }
    return DemandMatrix(rates)


def gen_arrivals(dm: DemandMatrix, t: int, rng: np.random.Generator) -> TransactionBatch:
    """Independent Poisson draws per pair; zero draws are omitted."""
    pairs = dm.pairs()
    if not pairs:
        return TransactionBatch(t, ())
    lam = np.array([dm.rate(i, j) for i, j in pairs])
    draws = rng.poisson(lam)
    entries = tuple(
        (i, j, int(a)) for (i, j), a in zip(pairs, draws) if a > 0
    )
    return TransactionBatch(t, entries)


@dataclass
class TraceSource:
    """Ordered transaction list ingested from an external trace.

    Entries are (source, destination, amount); `slots`, when present, maps
    each entry to its time slot, otherwise entries run one per slot in file
    order. Summary statistics cover the kept (post-filter) transactions.
    """

    entries: list[tuple[str, str, int]]
    slots: list[int] | None = None
    dropped: int = 0

    def summary(self) -> dict[str, float]:
        amounts = [a for _i, _j, a in self.entries]
        if not amounts:
            return {"count": 0, "mean": 0.0, "median": 0.0, "max": 0, "dropped": self.dropped}
        return {
            "count": len(amounts),
            "mean": float(np.mean(amounts)),
            "median": float(median(amounts)),
            "max": int(max(amounts)),
            "dropped": self.dropped,
        }

    def shuffled(self, rng: np.random.Generator) -> "TraceSource":
        order = rng.permutation(len(self.entries))
        return TraceSource(
            entries=[self.entries[k] for k in order],
            slots=None,
            dropped=self.dropped,
        )

    def n_slots(self) -> int:
        if self.slots:
            return max(self.slots) + 1
        return len(self.entries)

    def batches(self, horizon: int | None = None) -> Iterator[TransactionBatch]:
        """One batch per slot; unslotted traces run one transaction per slot."""
        total = self.n_slots() if horizon is None else min(horizon, self.n_slots())
        if self.slots is None:
            for t in range(total):
                yield TransactionBatch(t, (self.entries[t],))
            return
        by_slot: dict[int, list[tuple[str, str, int]]] = {}
        for entry, slot in zip(self.entries, self.slots):
            by_slot.setdefault(slot, []).append(entry)
        for t in range(total):
            yield TransactionBatch(t, tuple(by_slot.get(t, ())))


def load_transactions_csv(
    path,
    graph: PaymentGraph | None = None,
    amount_cap: int | None = None,
) -> TraceSource:
    """Stream a `src,dst,amount[,slot]` CSV into a TraceSource.

    Transactions above amount_cap and zero-value transactions are dropped;
    endpoints must exist in the graph when one is supplied.
    """
    entries: list[tuple[str, str, int]] = []
    slots: list[int] = []
    have_slots = False
    dropped = 0
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3:
                raise ParseError(path, lineno, "expected src,dst,amount[,slot]")
            src, dst = row[0].strip(), row[1].strip()
            if lineno == 1:
                try:
                    float(row[2])
                except ValueError:
                    continue  # header
            try:
                amount = int(float(row[2]))
            except ValueError:
                raise ParseError(path, lineno, f"amount {row[2]!r} is not numeric") from None
            if graph is not None:
                if src not in graph.vertex_index:
                    raise UnknownEndpoint(f"{path}:{lineno}: unknown agent {src!r}")
                if dst not in graph.vertex_index:
                    raise UnknownEndpoint(f"{path}:{lineno}: unknown agent {dst!r}")
            if src == dst:
                raise ParseError(path, lineno, "source equals destination")
            if amount < 1 or (amount_cap is not None and amount > amount_cap):
                dropped += 1
                continue
            if len(row) > 3 and row[3].strip():
                have_slots = True
                slots.append(int(row[3]))
            else:
                slots.append(len(entries))
            entries.append((src, dst, amount))
    return TraceSource(entries=entries, slots=slots if have_slots else None, dropped=dropped)


def load_trace(
    topology_path,
    transactions_path,
    amount_cap: int | None = None,
) -> tuple[PaymentGraph, TraceSource]:
    """Load a topology CSV and its transaction trace together."""
    graph = load_topology_csv(topology_path)
    trace = load_transactions_csv(transactions_path, graph=graph, amount_cap=amount_cap)
    return graph, trace


def save_transactions_csv(trace: TraceSource, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst", "amount", "slot"])
        for k, (i, j, a) in enumerate(trace.entries):
            slot = trace.slots[k] if trace.slots else k
            writer.writerow([i, j, a, slot])


def scale_to_capacity(
    dm: DemandMatrix,
    graph: PaymentGraph,
    table: PathTable,
    utilization: float = 1.0,
    tol: float = 1e-3,
) -> DemandMatrix:
    """Scale a circulation demand onto (or inside) the capacity region.

    Bisects a global scale factor against the feasibility check; the result
    is utilization times the largest confirmed-feasible scale. utilization
    values above 1 deliberately produce infeasible demand.
    """
    if dm.total_rate() <= 0:
        return dm

    def feasible(scale: float) -> bool:
        return check_capacity_region(dm.scaled(scale), graph, table).feasible

    lo, hi = 0.0, 1.0
    if feasible(1.0):
        lo = 1.0
        while feasible(2.0 * lo) and lo < 2**40:
            lo *= 2.0
        hi = 2.0 * lo
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return dm.scaled(lo * utilization)
