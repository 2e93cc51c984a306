"""Two-sided queue state and its exact one-step dynamics.

Every directed edge carries a buffer of outstanding payment value. Within a
slot, new demand y is enqueued, an equal amount is served on both sides of
each channel up to its capacity, and on-chain rebalancing r is withdrawn.
All transitions are integer and keep queues nonnegative.
"""

from __future__ import annotations

import csv
from typing import Mapping

import numpy as np

from .topology import PaymentGraph, Path

SERVICE_TIMINGS = ("post_arrival", "pre_arrival")


class NegativeQueue(RuntimeError):
    """A step would drive a queue negative; signals a policy bug."""


def service(q_uv: int, q_vu: int, cap: int) -> int:
    """Paired service on one channel: min of both buffers and the capacity."""
    if q_uv < 0 or q_vu < 0 or cap < 0:
        raise ValueError("service arguments must be nonnegative")
    return min(q_uv, q_vu, cap)


class ChannelState:
    """Dense per-directed-edge queue vector with snapshot/rollback support."""

    def __init__(self, graph: PaymentGraph, q: np.ndarray | None = None) -> None:
        self.graph = graph
        if q is None:
            self.q = np.zeros(graph.n_edges, dtype=np.int64)
        else:
            q = np.asarray(q, dtype=np.int64)
            if q.shape != (graph.n_edges,):
                raise ValueError("queue vector has wrong length")
            if (q < 0).any():
                raise NegativeQueue("initial queues must be nonnegative")
            self.q = q.copy()

    def copy(self) -> "ChannelState":
        return ChannelState(self.graph, self.q)

    def queue(self, u: str, v: str) -> int:
        return int(self.q[self.graph.edge_id(u, v)])

    def imbalance(self, u: str, v: str) -> int:
        """z(u,v) = q(u,v) - q(v,u); antisymmetric."""
        eid = self.graph.edge_id(u, v)
        return int(self.q[eid] - self.q[self.graph.reverse[eid]])

    def imbalance_vector(self) -> np.ndarray:
        return self.q - self.q[self.graph.reverse]

    def total(self) -> int:
        return int(self.q.sum())

    def service_vector(self) -> np.ndarray:
        """Per-edge service levels from the current queues."""
        return np.minimum(np.minimum(self.q, self.q[self.graph.reverse]),
                          self.graph.capacity)

    def step(
        self,
        y: np.ndarray | None = None,
        r: np.ndarray | None = None,
        timing: str = "post_arrival",
    ) -> np.ndarray:
        """Advance one slot in place; returns the per-edge service vector.

        post_arrival computes service from the queues after y is enqueued;
        pre_arrival uses the start-of-slot queues. Raises NegativeQueue when
        r exceeds what the buffer can give up.
        """
        if timing not in SERVICE_TIMINGS:
            raise ValueError(f"unknown service timing {timing!r}")
        g = self.graph
        y = np.zeros(g.n_edges, dtype=np.int64) if y is None else np.asarray(y, dtype=np.int64)
        r = np.zeros(g.n_edges, dtype=np.int64) if r is None else np.asarray(r, dtype=np.int64)
        if (y < 0).any() or (r < 0).any():
            raise ValueError("arrivals and rebalancing must be nonnegative")

        if timing == "post_arrival":
            loaded = self.q + y
            s = np.minimum(np.minimum(loaded, loaded[g.reverse]), g.capacity)
        else:
            s = self.service_vector()
            loaded = self.q + y
        avail = loaded - s
        if (r > avail).any():
            bad = int(np.flatnonzero(r > avail)[0])
            raise NegativeQueue(
                f"rebalancing {int(r[bad])} exceeds available {int(avail[bad])} "
                f"on edge {self.graph.edges[bad]}"
            )
        self.q = avail - r
        return s

    def dump_csv(self, path) -> None:
        """State dump, one `u,v,q_uv` row per directed edge."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["u", "v", "q_uv"])
            for eid, (u, v) in enumerate(self.graph.edges):
                writer.writerow([u, v, int(self.q[eid])])

    @classmethod
    def load_csv(cls, graph: PaymentGraph, path) -> "ChannelState":
        q = np.zeros(graph.n_edges, dtype=np.int64)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            for lineno, row in enumerate(reader, start=1):
                if not row or row[0] == "u":
                    continue
                u, v, val = row[0], row[1], int(row[2])
                q[graph.edge_id(u, v)] = val
        return cls(graph, q)


def aggregate_flow(path_flows: Mapping[Path, int], graph: PaymentGraph) -> np.ndarray:
    """Per-edge demand added by a routing decision: y = sum of x over paths using the edge."""
    y = np.zeros(graph.n_edges, dtype=np.int64)
    for path, amount in path_flows.items():
        if amount == 0:
            continue
        if amount < 0:
            raise ValueError("path flows must be nonnegative")
        y[graph.path_edge_ids(path)] += int(amount)
    return y


def step(
    state: ChannelState,
    y: np.ndarray | None = None,
    r: np.ndarray | None = None,
    timing: str = "post_arrival",
) -> ChannelState:
    """Pure one-slot transition: returns the successor state, input untouched."""
    nxt = state.copy()
    nxt.step(y, r, timing)
    return nxt
