"""Routing policies mapping (graph, queues, arrivals) to one slot's decision.

Four policies share the same state-dependent edge weight (the channel
imbalance plus a capacity-scaled load term) and differ in how they search
paths and admit transactions:

* exact: every arriving amount goes whole onto the minimum-weight path over
  the full path universe; queues above the threshold trigger probabilistic
  one-unit on-chain rebalancing per edge.
* heuristic: candidate paths come from a k-shortest search under the
  clipped (nonnegative) weights; the true-weight minimizer among them wins.
* waterfilling: transactions are split into packets routed one at a time
  against tentatively updated queues, committed atomically only if no
  tentative queue exceeds its per-edge threshold (capacity by default).
* fluid: each transaction samples a path in proportion to precomputed fluid
  rates and is rejected if it would push a queue past the threshold.

Policies never mutate the caller's state; all randomness comes from the rng
argument, so runs are reproducible from the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Iterable, Mapping

import numpy as np

from .topology import (
    Edge,
    NoPathExists,
    PaymentGraph,
    Path,
    PathTable,
    k_shortest_paths,
)

if TYPE_CHECKING:  # pragma: no cover
    from .fluid import DemandMatrix, FluidSolution
    from .ledger import ChannelState


class GraphTooLarge(ValueError):
    """Exhaustive path enumeration refused; use the heuristic policy."""


class MissingFluidSolution(RuntimeError):
    pass


POLICY_NAMES = ("exact", "heuristic", "waterfilling", "fluid")


@dataclass(frozen=True)
class PolicyParams:
    """Tuning knobs shared by the routing policies.

    threshold is the on-chain trigger level (must exceed every capacity for
    the exact policy's rebalancing mode; per-edge thresholds equal to the
    capacities are the water-filling default). delta in [0, 1] is the
    rebalancing probability; alpha > 1 damps the load term against the
    imbalance term; k bounds the heuristic's candidate set; packet_size sets
    the water-filling granularity.
    """

    threshold: int | None = None
    delta: float = 0.1
    alpha: float = 2.0
    k: int = 1
    packet_size: int = 1
    per_edge_threshold: Mapping[Edge, int] | None = None
    vertex_limit: int = 12
    rebalance_sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None

    def __post_init__(self) -> None:
        # delta = 0 disables rebalancing entirely (used by instability studies);
        # the stability guarantees only cover delta > 0.
        if not (0.0 <= self.delta <= 1.0):
            raise ValueError("delta must lie in [0, 1]")
        if not (self.alpha > 1.0):
            raise ValueError("alpha must exceed 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.packet_size < 1:
            raise ValueError("packet_size must be >= 1")

    def thresholds(self, graph: PaymentGraph, default_capacity: bool = False) -> np.ndarray:
        """Per-directed-edge threshold vector.

        Falls back to the channel capacities when no scalar or per-edge
        threshold is configured and `default_capacity` is set (the
        comparison-mode and water-filling convention).
        """
        if self.per_edge_threshold is not None:
            arr = np.empty(graph.n_edges, dtype=np.int64)
            for eid, e in enumerate(graph.edges):
                arr[eid] = int(self.per_edge_threshold[e])
            return arr
        if self.threshold is not None:
            return np.full(graph.n_edges, int(self.threshold), dtype=np.int64)
        if default_capacity:
            return graph.capacity.copy()
        raise ValueError("no threshold configured")


def edge_weight_vector(
    state: "ChannelState", graph: PaymentGraph, delta: float, alpha: float
) -> np.ndarray:
    """Per-directed-edge routing weight: imbalance plus scaled channel load."""
    q = state.q
    qr = q[graph.reverse]
    return (q - qr) + (delta / (2.0 * alpha * graph.capacity)) * (q + qr)


def edge_weight(
    state: "ChannelState", edge: Edge, params: PolicyParams, graph: PaymentGraph
) -> float:
    eid = graph.edge_id(*edge)
    q = float(state.q[eid])
    qr = float(state.q[graph.reverse[eid]])
    c = float(graph.capacity[eid])
    return (q - qr) + (params.delta / (2.0 * params.alpha * c)) * (q + qr)


@dataclass
class RoutingDecision:
    """One slot's routing output: path allocations, on-chain moves, drops."""

    path_flows: dict[Path, int] = field(default_factory=dict)
    rebalance: dict[Edge, int] = field(default_factory=dict)
    rejected: dict[tuple[str, str], int] = field(default_factory=dict)
    onchain: dict[tuple[str, str], int] = field(default_factory=dict)
    accepted_count: int = 0
    rejected_count: int = 0
    onchain_count: int = 0

    def routed_volume(self) -> int:
        return int(sum(self.path_flows.values()))

    def rejected_volume(self) -> int:
        return int(sum(self.rejected.values()))

    def onchain_volume(self) -> int:
        return int(sum(self.onchain.values()))

    def rebalance_vector(self, graph: PaymentGraph) -> np.ndarray:
        r = np.zeros(graph.n_edges, dtype=np.int64)
        for e, amount in self.rebalance.items():
            r[graph.edge_id(*e)] = int(amount)
        return r

    def _add_flow(self, path: Path, amount: int) -> None:
        self.path_flows[path] = self.path_flows.get(path, 0) + int(amount)

    def _drop(self, pair: tuple[str, str], amount: int) -> None:
        self.rejected[pair] = self.rejected.get(pair, 0) + int(amount)
        self.rejected_count += 1

    def _send_onchain(self, pair: tuple[str, str], amount: int) -> None:
        self.onchain[pair] = self.onchain.get(pair, 0) + int(amount)
        self.onchain_count += 1


def _sorted_entries(batch) -> list[tuple[str, str, int]]:
    entries = list(getattr(batch, "entries", batch))
    entries.sort(key=lambda e: (e[0], e[1]))
    return entries


def _aggregate_pairs(entries: Iterable[tuple[str, str, int]]) -> list[tuple[str, str, int]]:
    agg: dict[tuple[str, str], int] = {}
    for i, j, amount in entries:
        agg[(i, j)] = agg.get((i, j), 0) + int(amount)
    return [(i, j, a) for (i, j), a in sorted(agg.items())]


def _draw_rebalance(
    decision: RoutingDecision,
    q: np.ndarray,
    thresholds: np.ndarray,
    params: PolicyParams,
    rng: np.random.Generator,
    graph: PaymentGraph,
) -> None:
    """Independent per-edge on-chain draws for queues above their threshold."""
    if (thresholds < graph.capacity).any():
        raise ValueError(
            "rebalancing thresholds must be at least the channel capacities"
        )
    over = np.flatnonzero(q > thresholds)
    if over.size == 0:
        return
    if params.rebalance_sampler is not None:
        amounts = np.asarray(params.rebalance_sampler(rng, over.size), dtype=np.int64)
    else:
        amounts = (rng.random(over.size) < params.delta).astype(np.int64)
    # q - c is always withdrawable regardless of the slot's arrivals/service.
    amounts = np.minimum(amounts, q[over] - graph.capacity[over])
    for eid, amount in zip(over, amounts):
        if amount > 0:
            decision.rebalance[graph.edges[int(eid)]] = int(amount)


class _PathSelector:
    """Shared admission/tentative-queue machinery for the policies."""

    def __init__(self, graph: PaymentGraph, params: PolicyParams) -> None:
        self.graph = graph
        self.params = params

    def _admit(self, tq: np.ndarray, ids: np.ndarray, amount: int,
               thresholds: np.ndarray) -> bool:
        """Arrivals-only tentative check; commits into tq on success."""
        tq[ids] += amount
        if (tq[ids] > thresholds[ids]).any():
            tq[ids] -= amount
            return False
        return True


class ExactPolicy(_PathSelector):
    """Whole-transaction minimum-weight routing over the full path universe."""

    def __init__(self, graph: PaymentGraph, table: PathTable, params: PolicyParams) -> None:
        super().__init__(graph, params)
        if graph.n_vertices > params.vertex_limit:
            raise GraphTooLarge(
                f"exact routing enumerates all paths; {graph.n_vertices} vertices "
                f"exceed the limit of {params.vertex_limit} - use the heuristic policy"
            )
        self.table = table

    def best_path(self, i: str, j: str, sums: np.ndarray) -> Path:
        path, _w = self.table.min_weight_path(i, j, sums=sums)
        return path

    def route(
        self,
        state: "ChannelState",
        batch,
        rng: np.random.Generator,
        drop: bool = False,
        timing: str = "post_arrival",
    ) -> RoutingDecision:
        weights = edge_weight_vector(state, self.graph, self.params.delta, self.params.alpha)
        sums = self.table.weight_sums(weights)
        decision = RoutingDecision()
        entries = _sorted_entries(batch)

        if drop:
            thresholds = self.params.thresholds(self.graph, default_capacity=True)
            tq = state.q.copy()
            for i, j, amount in entries:
                path = self.best_path(i, j, sums)
                if self._admit(tq, self.table.edge_ids(path), amount, thresholds):
                    decision._add_flow(path, amount)
                    decision.accepted_count += 1
                else:
                    decision._drop((i, j), amount)
            return decision

        for i, j, amount in _aggregate_pairs(entries):
            decision._add_flow(self.best_path(i, j, sums), amount)
        decision.accepted_count = len(entries)
        thresholds = self.params.thresholds(self.graph)
        _draw_rebalance(decision, state.q, thresholds, self.params, rng, self.graph)
        return decision


class HeuristicPolicy(_PathSelector):
    """Candidate paths from a k-shortest search under clipped weights.

    The clipped weights make the search a nonnegative shortest-path problem;
    the final choice minimizes the true (possibly negative) weight among the
    candidates. Graphs beyond `scale_cutoff` vertices use a sparse Dijkstra
    backend (k = 1) instead of the pure-Python search.
    """

    def __init__(
        self,
        graph: PaymentGraph,
        params: PolicyParams,
        backend: str = "auto",
        scale_cutoff: int = 2000,
    ) -> None:
        super().__init__(graph, params)
        if backend == "auto":
            backend = "sparse" if graph.n_vertices > scale_cutoff else "yen"
        if backend not in ("yen", "sparse"):
            raise ValueError(f"unknown heuristic backend {backend!r}")
        self.backend = backend
        if backend == "sparse":
            self._init_sparse()

    def _init_sparse(self) -> None:
        from scipy.sparse import csr_matrix

        g = self.graph
        rows = np.array([g.vertex_index[u] for u, _v in g.edges], dtype=np.int32)
        cols = np.array([g.vertex_index[v] for _u, v in g.edges], dtype=np.int32)
        marker = csr_matrix(
            (np.arange(1, g.n_edges + 1, dtype=np.float64), (rows, cols)),
            shape=(g.n_vertices, g.n_vertices),
        )
        self._csr = marker
        self._csr_perm = marker.data.astype(np.intp) - 1

    def _best_sparse(self, i: str, j: str, clipped: np.ndarray) -> Path:
        from scipy.sparse.csgraph import dijkstra as sp_dijkstra

        g = self.graph
        # csgraph drops exact zeros from CSR data, so floor the weights.
        self._csr.data = np.maximum(clipped[self._csr_perm], 1e-12)
        src, dst = g.vertex_index[i], g.vertex_index[j]
        dist, pred = sp_dijkstra(
            self._csr, indices=src, return_predecessors=True, directed=True
        )
        if not np.isfinite(dist[dst]):
            raise NoPathExists(f"no path from {i!r} to {j!r}")
        rev: list[str] = [j]
        node = dst
        while node != src:
            node = int(pred[node])
            rev.append(g.vertices[node])
        return tuple(reversed(rev))

    def candidate_paths(self, i: str, j: str, clipped: np.ndarray) -> list[Path]:
        return k_shortest_paths(self.graph, i, j, self.params.k, clipped)

    def best_path(self, i: str, j: str, clipped: np.ndarray,
                  weights: np.ndarray) -> Path:
        if self.backend == "sparse" and self.params.k == 1:
            return self._best_sparse(i, j, clipped)
        candidates = self.candidate_paths(i, j, clipped)
        w_ext = np.append(weights, 0.0)

        def true_weight(p: Path) -> float:
            return float(w_ext[self.graph.path_edge_ids(p)].sum())

        return min(candidates, key=lambda p: (true_weight(p), len(p), p))

    def route(
        self,
        state: "ChannelState",
        batch,
        rng: np.random.Generator,
        drop: bool = False,
        timing: str = "post_arrival",
    ) -> RoutingDecision:
        weights = edge_weight_vector(state, self.graph, self.params.delta, self.params.alpha)
        clipped = np.maximum(weights, 0.0)
        decision = RoutingDecision()
        entries = _sorted_entries(batch)

        if drop:
            thresholds = self.params.thresholds(self.graph, default_capacity=True)
            tq = state.q.copy()
            for i, j, amount in entries:
                path = self.best_path(i, j, clipped, weights)
                if self._admit(tq, self.graph.path_edge_ids(path), amount, thresholds):
                    decision._add_flow(path, amount)
                    decision.accepted_count += 1
                else:
                    decision._drop((i, j), amount)
            return decision

        for i, j, amount in _aggregate_pairs(entries):
            decision._add_flow(self.best_path(i, j, clipped, weights), amount)
        decision.accepted_count = len(entries)
        thresholds = self.params.thresholds(self.graph)
        _draw_rebalance(decision, state.q, thresholds, self.params, rng, self.graph)
        return decision


class WaterfillingPolicy(_PathSelector):
    """Packetized multi-path routing with atomic per-transaction commit.

    Packets are routed one at a time on the current minimum-weight path while
    the queues (including service) are updated tentatively; a transaction
    whose tentative queues stay within the per-edge thresholds is committed,
    otherwise it is rolled back and goes on-chain with probability delta or
    is rejected. Thresholds default to the channel capacities.
    """

    def __init__(self, graph: PaymentGraph, table: PathTable, params: PolicyParams) -> None:
        super().__init__(graph, params)
        if graph.n_vertices > params.vertex_limit:
            raise GraphTooLarge(
                f"water-filling enumerates all paths; {graph.n_vertices} vertices "
                f"exceed the limit of {params.vertex_limit} - use the heuristic policy"
            )
        self.table = table

    def _tentative_packet(self, tq: np.ndarray, ids: np.ndarray, amount: int,
                          timing: str) -> None:
        g = self.graph
        if timing == "pre_arrival":
            s = np.minimum(np.minimum(tq, tq[g.reverse]), g.capacity)
            tq[ids] += amount
            tq -= s
        else:
            tq[ids] += amount
            s = np.minimum(np.minimum(tq, tq[g.reverse]), g.capacity)
            tq -= s

    def route(
        self,
        state: "ChannelState",
        batch,
        rng: np.random.Generator,
        drop: bool = False,
        timing: str = "post_arrival",
    ) -> RoutingDecision:
        params = self.params
        thresholds = params.thresholds(self.graph, default_capacity=True)
        decision = RoutingDecision()
        tq = state.q.copy()

        for i, j, amount in _sorted_entries(batch):
            snapshot = tq.copy()
            txn_flows: dict[Path, int] = {}
            touched: set[int] = set()
            remaining = int(amount)
            while remaining > 0:
                chunk = min(params.packet_size, remaining)
                weights = _weights_from_q(tq, self.graph, params.delta, params.alpha)
                path, _w = self.table.min_weight_path(i, j, edge_weights=weights)
                ids = self.table.edge_ids(path)
                self._tentative_packet(tq, ids, chunk, timing)
                txn_flows[path] = txn_flows.get(path, 0) + chunk
                touched.update(int(e) for e in ids)
                remaining -= chunk

            touched_ids = np.fromiter(touched, dtype=np.intp)
            if (tq[touched_ids] <= thresholds[touched_ids]).all():
                for path, amt in txn_flows.items():
                    decision._add_flow(path, amt)
                decision.accepted_count += 1
            else:
                tq = snapshot
                if not drop and rng.random() < params.delta:
                    decision._send_onchain((i, j), amount)
                else:
                    decision._drop((i, j), amount)
        return decision


def _weights_from_q(q: np.ndarray, graph: PaymentGraph, delta: float, alpha: float) -> np.ndarray:
    qr = q[graph.reverse]
    return (q - qr) + (delta / (2.0 * alpha * graph.capacity)) * (q + qr)


class FluidPolicy(_PathSelector):
    """Randomized path selection proportional to precomputed fluid rates.

    Each transaction samples a path with probability rate/lambda for its
    pair (rejecting with the residual probability) and commits only if the
    sampled path's queues stay within the thresholds. Overflow always
    rejects; this policy never uses on-chain rebalancing.
    """

    def __init__(
        self,
        graph: PaymentGraph,
        table: PathTable,
        params: PolicyParams,
        solution: "FluidSolution",
        demand: "DemandMatrix",
    ) -> None:
        super().__init__(graph, params)
        if solution is None:
            raise MissingFluidSolution("fluid routing requires a solved fluid model")
        if graph.n_vertices > params.vertex_limit:
            raise GraphTooLarge(
                f"fluid routing enumerates all paths; {graph.n_vertices} vertices "
                f"exceed the limit of {params.vertex_limit}"
            )
        self.table = table
        self.solution = solution
        self.demand = demand
        self._cum: dict[tuple[str, str], tuple[np.ndarray, tuple[Path, ...]]] = {}
        for (i, j) in demand.pairs():
            plist = table.paths(i, j)
            lam = demand.rate(i, j)
            probs = np.array([solution.rate(p) / lam for p in plist])
            probs = np.clip(probs, 0.0, None)
            total = probs.sum()
            if total > 1.0:  # numerical slack from the solver
                probs /= total
            self._cum[(i, j)] = (np.cumsum(probs), plist)

    def route(
        self,
        state: "ChannelState",
        batch,
        rng: np.random.Generator,
        drop: bool = True,
        timing: str = "post_arrival",
    ) -> RoutingDecision:
        thresholds = self.params.thresholds(self.graph, default_capacity=True)
        decision = RoutingDecision()
        tq = state.q.copy()
        for i, j, amount in _sorted_entries(batch):
            entry = self._cum.get((i, j))
            draw = rng.random()
            if entry is None:
                decision._drop((i, j), amount)
                continue
            cum, plist = entry
            idx = int(np.searchsorted(cum, draw, side="right"))
            if idx >= len(plist):
                decision._drop((i, j), amount)  # residual fluid mass
                continue
            path = plist[idx]
            if self._admit(tq, self.table.edge_ids(path), amount, thresholds):
                decision._add_flow(path, amount)
                decision.accepted_count += 1
            else:
                decision._drop((i, j), amount)
        return decision


def route_exact(
    graph: PaymentGraph,
    state: "ChannelState",
    batch,
    params: PolicyParams,
    rng: np.random.Generator,
    table: PathTable | None = None,
    drop: bool = False,
) -> RoutingDecision:
    table = table if table is not None else PathTable(graph)
    return ExactPolicy(graph, table, params).route(state, batch, rng, drop=drop)


def route_heuristic(
    graph: PaymentGraph,
    state: "ChannelState",
    batch,
    params: PolicyParams,
    rng: np.random.Generator,
    drop: bool = False,
    backend: str = "auto",
) -> RoutingDecision:
    return HeuristicPolicy(graph, params, backend=backend).route(state, batch, rng, drop=drop)


def route_waterfilling(
    graph: PaymentGraph,
    state: "ChannelState",
    batch,
    params: PolicyParams,
    rng: np.random.Generator,
    table: PathTable | None = None,
    drop: bool = False,
    timing: str = "post_arrival",
) -> RoutingDecision:
    table = table if table is not None else PathTable(graph)
    return WaterfillingPolicy(graph, table, params).route(
        state, batch, rng, drop=drop, timing=timing
    )


def route_fluid(
    graph: PaymentGraph,
    state: "ChannelState",
    batch,
    solution: "FluidSolution",
    demand: "DemandMatrix",
    params: PolicyParams,
    rng: np.random.Generator,
    table: PathTable | None = None,
) -> RoutingDecision:
    table = table if table is not None else PathTable(graph)
    return FluidPolicy(graph, table, params, solution, demand).route(state, batch, rng)
