"""Payment-network graph model and path machinery.

Agents are vertices; every channel is a bidirectional capacity-limited link,
so both directed edges are materialized with equal capacity. Vertex ids are
opaque strings mapped to dense integer indices at construction; graphs are
immutable after construction and safe for concurrent reads.
"""

from __future__ import annotations

import csv
import heapq
from collections import deque
from typing import Iterable, Mapping, Sequence

import numpy as np

Edge = tuple[str, str]
Path = tuple[str, ...]  # vertex sequence, source first


class TopologyError(ValueError):
    """Base class for graph construction and path lookup failures."""


class DuplicateEdge(TopologyError):
    pass


class NonPositiveCapacity(TopologyError):
    pass


class DisconnectedGraph(TopologyError):
    pass


class NoPathExists(TopologyError):
    pass


def path_edges(path: Path) -> list[Edge]:
    """Directed edges traversed by a vertex sequence."""
    return [(path[i], path[i + 1]) for i in range(len(path) - 1)]


def path_sort_key(path: Path, weight: float = 0.0):
    """Deterministic ordering: total weight, then hop count, then vertex sequence."""
    return (weight, len(path), path)


class PaymentGraph:
    """Directed graph of agents with bidirectional capacitated channels.

    Every channel (u, v) appears as the two directed edges (u, v) and (v, u)
    with c(u, v) = c(v, u) > 0. Construction rejects duplicate channels,
    non-positive capacities and disconnected graphs.
    """

    def __init__(self, channels: Sequence[tuple[str, str, int]]) -> None:
        if not channels:
            raise TopologyError("channel list is empty")
        seen: set[frozenset[str]] = set()
        canon: list[tuple[str, str, int]] = []
        verts: set[str] = set()
        for u, v, cap in channels:
            u, v = str(u), str(v)
            if u == v:
                raise DuplicateEdge(f"self-loop on {u!r}")
            if int(cap) != cap or cap <= 0:
                raise NonPositiveCapacity(f"channel ({u},{v}) has capacity {cap!r}")
            key = frozenset((u, v))
            if key in seen:
                raise DuplicateEdge(f"channel ({u},{v}) listed more than once")
            seen.add(key)
            canon.append((min(u, v), max(u, v), int(cap)))
            verts.update((u, v))

        self.vertices: tuple[str, ...] = tuple(sorted(verts))
        self.vertex_index: dict[str, int] = {v: i for i, v in enumerate(self.vertices)}
        self.channels: tuple[tuple[str, str, int], ...] = tuple(sorted(canon))

        edges: list[Edge] = []
        for u, v, _cap in self.channels:
            edges.append((u, v))
            edges.append((v, u))
        edges.sort()
        self.edges: tuple[Edge, ...] = tuple(edges)
        self.edge_index: dict[Edge, int] = {e: i for i, e in enumerate(self.edges)}

        cap_by_pair = {frozenset((u, v)): c for u, v, c in self.channels}
        self.capacity = np.array(
            [cap_by_pair[frozenset(e)] for e in self.edges], dtype=np.int64
        )
        self.reverse = np.array(
            [self.edge_index[(v, u)] for (u, v) in self.edges], dtype=np.intp
        )

        nbrs: dict[str, list[str]] = {v: [] for v in self.vertices}
        for u, v, _cap in self.channels:
            nbrs[u].append(v)
            nbrs[v].append(u)
        self.neighbors: dict[str, tuple[str, ...]] = {
            v: tuple(sorted(ns)) for v, ns in nbrs.items()
        }

        self._check_connected()

    def _check_connected(self) -> None:
        start = self.vertices[0]
        seen = {start}
        frontier = deque([start])
        while frontier:
            u = frontier.popleft()
            for v in self.neighbors[u]:
                if v not in seen:
                    seen.add(v)
                    frontier.append(v)
        if len(seen) != len(self.vertices):
            missing = sorted(set(self.vertices) - seen)
            raise DisconnectedGraph(f"graph is not connected; unreachable: {missing}")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        """Number of directed edges (two per channel)."""
        return len(self.edges)

    @property
    def c_max(self) -> int:
        return int(self.capacity.max())

    @property
    def c_min(self) -> int:
        return int(self.capacity.min())

    def edge_id(self, u: str, v: str) -> int:
        try:
            return self.edge_index[(u, v)]
        except KeyError:
            raise TopologyError(f"no edge ({u},{v})") from None

    def edge_capacity(self, u: str, v: str) -> int:
        return int(self.capacity[self.edge_id(u, v)])

    def path_edge_ids(self, path: Path) -> np.ndarray:
        return np.array([self.edge_id(u, v) for u, v in path_edges(path)], dtype=np.intp)

    def with_uniform_capacity(self, cap: int) -> "PaymentGraph":
        """Same topology with every channel capacity replaced by `cap`."""
        return PaymentGraph([(u, v, cap) for u, v, _c in self.channels])

    def __repr__(self) -> str:
        return (
            f"PaymentGraph(|V|={self.n_vertices}, channels={len(self.channels)}, "
            f"c_min={self.c_min}, c_max={self.c_max})"
        )


def build_graph(edge_list: Iterable[tuple[str, str, int]]) -> PaymentGraph:
    """Build a PaymentGraph from (u, v, capacity) channel triples."""
    return PaymentGraph(list(edge_list))


def load_topology_csv(path) -> PaymentGraph:
    """Read a topology CSV with one `u,v,capacity` line per channel.

    A header row is auto-detected (third field not an integer).
    """
    channels: list[tuple[str, str, int]] = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 3:
                raise TopologyError(f"{path}:{lineno}: expected u,v,capacity")
            u, v, cap = row[0].strip(), row[1].strip(), row[2].strip()
            if lineno == 1:
                try:
                    int(cap)
                except ValueError:
                    continue  # header row
            try:
                channels.append((u, v, int(cap)))
            except ValueError:
                raise TopologyError(
                    f"{path}:{lineno}: capacity {cap!r} is not an integer"
                ) from None
    return build_graph(channels)


def save_topology_csv(graph: PaymentGraph, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "v", "capacity"])
        for u, v, cap in graph.channels:
            writer.writerow([u, v, cap])


def _hop_distances(graph: PaymentGraph, target: str) -> dict[str, int]:
    dist = {target: 0}
    frontier = deque([target])
    while frontier:
        u = frontier.popleft()
        for v in graph.neighbors[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                frontier.append(v)
    return dist


def enumerate_paths(
    graph: PaymentGraph, i: str, j: str, max_hops: int | None = None
) -> list[Path]:
    """All loopless paths from i to j with at most max_hops edges.

    Returned in lexicographic order of the vertex sequence. max_hops defaults
    to |V|-1 (every loopless path).
    """
    if i == j:
        raise TopologyError("source and destination coincide")
    if i not in graph.vertex_index or j not in graph.vertex_index:
        raise TopologyError(f"unknown endpoint in ({i!r},{j!r})")
    if max_hops is None:
        max_hops = graph.n_vertices - 1
    if max_hops < 1:
        raise TopologyError("max_hops must be >= 1")

    dist_to_target = _hop_distances(graph, j)
    found: list[Path] = []
    stack: list[str] = [i]
    on_stack = {i}

    def visit(u: str, hops_left: int) -> None:
        for v in graph.neighbors[u]:
            if v == j:
                found.append(tuple(stack) + (j,))
                continue
            if v in on_stack or hops_left <= 1:
                continue
            if dist_to_target.get(v, max_hops + 1) > hops_left - 1:
                continue
            stack.append(v)
            on_stack.add(v)
            visit(v, hops_left - 1)
            stack.pop()
            on_stack.remove(v)

    visit(i, max_hops)
    if not found:
        raise NoPathExists(f"no path from {i!r} to {j!r} within {max_hops} hops")
    found.sort()
    return found


def _as_weight_array(graph: PaymentGraph, weight) -> np.ndarray:
    if isinstance(weight, np.ndarray):
        w = np.asarray(weight, dtype=float)
        if w.shape != (graph.n_edges,):
            raise TopologyError("weight array has wrong length")
        return w
    if isinstance(weight, Mapping):
        w = np.zeros(graph.n_edges, dtype=float)
        for e, val in weight.items():
            w[graph.edge_id(*e)] = float(val)
        return w
    if callable(weight):
        return np.array([float(weight(e)) for e in graph.edges], dtype=float)
    raise TopologyError(f"unsupported weight specification: {weight!r}")


def _dijkstra(
    graph: PaymentGraph,
    source: str,
    target: str,
    w: np.ndarray,
    banned_nodes: frozenset[str] = frozenset(),
    banned_edges: frozenset[Edge] = frozenset(),
) -> tuple[float, Path] | None:
    """Cheapest path with deterministic (cost, hops, lexicographic) tie-break."""
    # Heap entries carry the full path so equal-cost paths pop in canonical order.
    heap: list[tuple[float, int, Path]] = [(0.0, 1, (source,))]
    done: set[str] = set()
    while heap:
        cost, _n, path = heapq.heappop(heap)
        u = path[-1]
        if u == target:
            return cost, path
        if u in done:
            continue
        done.add(u)
        for v in graph.neighbors[u]:
            if v in done or v in banned_nodes or (u, v) in banned_edges:
                continue
            nxt = path + (v,)
            heapq.heappush(heap, (cost + w[graph.edge_index[(u, v)]], len(nxt), nxt))
    return None


def k_shortest_paths(
    graph: PaymentGraph,
    i: str,
    j: str,
    k: int,
    weight,
) -> list[Path]:
    """Up to k loopless minimum-weight paths from i to j, ascending.

    `weight` maps directed edges to nonnegative reals (a mapping, callable or
    dense array indexed by edge id). Ties are broken by hop count then by
    lexicographic vertex sequence; fewer than k paths are returned when fewer
    exist.
    """
    if k < 1:
        raise TopologyError("k must be >= 1")
    w = _as_weight_array(graph, weight)
    if (w < 0).any():
        raise TopologyError("k_shortest_paths requires nonnegative weights")

    best = _dijkstra(graph, i, j, w)
    if best is None:
        raise NoPathExists(f"no path from {i!r} to {j!r}")
    found: list[tuple[float, Path]] = [best]
    candidates: list[tuple[float, int, Path]] = []
    enqueued: set[Path] = {best[1]}

    def path_cost(p: Path) -> float:
        return float(sum(w[graph.edge_index[e]] for e in path_edges(p)))

    while len(found) < k:
        _, prev = found[-1]
        for idx in range(len(prev) - 1):
            root = prev[: idx + 1]
            spur = prev[idx]
            banned_edges = {
                (p[idx], p[idx + 1])
                for _c, p in found
                if len(p) > idx + 1 and p[: idx + 1] == root
            }
            banned_nodes = frozenset(root[:-1])
            res = _dijkstra(graph, spur, j, w, banned_nodes, frozenset(banned_edges))
            if res is None:
                continue
            _, spur_path = res
            total = root[:-1] + spur_path
            if total in enqueued:
                continue
            enqueued.add(total)
            heapq.heappush(candidates, (path_cost(total), len(total), total))
        if not candidates:
            break
        cost, _n, path = heapq.heappop(candidates)
        found.append((cost, path))
    return [p for _c, p in found]


class PathTable:
    """Precomputed loopless-path universe for every ordered vertex pair.

    Per pair, paths are held in (hop count, lexicographic) order so an argmin
    over weights resolves ties deterministically. Edge ids are packed into a
    padded matrix for vectorized weight sums across the whole table.
    """

    def __init__(self, graph: PaymentGraph, max_hops: int | None = None) -> None:
        self.graph = graph
        if max_hops is None:
            max_hops = default_max_hops(graph)
        self.max_hops = max_hops

        pairs: list[tuple[str, str]] = []
        paths_by_pair: dict[tuple[str, str], tuple[Path, ...]] = {}
        all_paths: list[Path] = []
        offsets: dict[tuple[str, str], tuple[int, int]] = {}
        for a in graph.vertices:
            for b in graph.vertices:
                if a == b:
                    continue
                plist = enumerate_paths(graph, a, b, max_hops)
                plist.sort(key=lambda p: (len(p), p))
                pairs.append((a, b))
                paths_by_pair[(a, b)] = tuple(plist)
                offsets[(a, b)] = (len(all_paths), len(plist))
                all_paths.extend(plist)

        self.pairs: tuple[tuple[str, str], ...] = tuple(pairs)
        self._paths_by_pair = paths_by_pair
        self._offsets = offsets
        self.all_paths: tuple[Path, ...] = tuple(all_paths)

        pad = graph.n_edges  # sentinel column mapped to weight 0
        width = max(len(p) - 1 for p in all_paths)
        ids = np.full((len(all_paths), width), pad, dtype=np.intp)
        for r, p in enumerate(all_paths):
            eids = graph.path_edge_ids(p)
            ids[r, : eids.size] = eids
        self._edge_ids = ids
        self._path_ids: dict[Path, np.ndarray] = {
            p: graph.path_edge_ids(p) for p in all_paths
        }

    @property
    def n_paths(self) -> int:
        return len(self.all_paths)

    def paths(self, i: str, j: str) -> tuple[Path, ...]:
        try:
            return self._paths_by_pair[(i, j)]
        except KeyError:
            raise NoPathExists(f"no cataloged paths for pair ({i!r},{j!r})") from None

    def edge_ids(self, path: Path) -> np.ndarray:
        return self._path_ids[path]

    def pair_slice(self, i: str, j: str) -> slice:
        start, count = self._offsets[(i, j)]
        return slice(start, start + count)

    def weight_sums(self, edge_weights: np.ndarray) -> np.ndarray:
        """Total weight of every cataloged path under the given edge weights."""
        w_ext = np.append(np.asarray(edge_weights, dtype=float), 0.0)
        return w_ext[self._edge_ids].sum(axis=1)

    def pair_weight_sums(self, i: str, j: str, edge_weights: np.ndarray) -> np.ndarray:
        w_ext = np.append(np.asarray(edge_weights, dtype=float), 0.0)
        return w_ext[self._edge_ids[self.pair_slice(i, j)]].sum(axis=1)

    def min_weight_path(
        self, i: str, j: str, edge_weights: np.ndarray | None = None,
        sums: np.ndarray | None = None,
    ) -> tuple[Path, float]:
        """Minimum-weight cataloged path for a pair (ties: hops, then lex)."""
        sl = self.pair_slice(i, j)
        if sums is not None:
            local = sums[sl]
        else:
            local = self.pair_weight_sums(i, j, edge_weights)
        idx = int(np.argmin(local))  # first minimum = canonical tie-break
        return self._paths_by_pair[(i, j)][idx], float(local[idx])


def default_max_hops(graph: PaymentGraph, cap: int = 8) -> int:
    """|V|-1 for small graphs, a fixed cap for large ones (enumeration cost)."""
    return min(graph.n_vertices - 1, cap)
