"""Capacity-region analysis and the fluid throughput optimization.

The capacity region is the set of demand-rate matrices that admit a path
allocation meeting the demand exactly, loading each channel within twice its
capacity, and keeping both directions of every channel in balance. The fluid
solver maximizes routed throughput under the same load and balance
constraints via projected dual descent, recovering a primal from averaged
iterates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.optimize import linprog

from .topology import Edge, PaymentGraph, Path, PathTable

CIRCULATION_TOL = 1e-9
FEASIBILITY_TOL = 1e-6


class InfeasibleDemand(ValueError):
    """Demand matrix lies outside the capacity region."""


class ParameterViolation(ValueError):
    """Policy parameters outside the range required by the queue bound."""


@dataclass(frozen=True)
class DemandMatrix:
    """Mean arrival rates per ordered agent pair, with optional variances.

    Variances default to the rates (Poisson arrivals); they are used only by
    the steady-state queue bound.
    """

    rates: Mapping[tuple[str, str], float]
    variances: Mapping[tuple[str, str], float] | None = None

    def __post_init__(self) -> None:
        for (i, j), lam in self.rates.items():
            if i == j:
                raise ValueError(f"demand on diagonal pair ({i},{j})")
            if not math.isfinite(lam) or lam < 0:
                raise ValueError(f"rate for ({i},{j}) must be finite and >= 0")

    def rate(self, i: str, j: str) -> float:
        return float(self.rates.get((i, j), 0.0))

    def variance(self, i: str, j: str) -> float:
        if self.variances is not None and (i, j) in self.variances:
            return float(self.variances[(i, j)])
        return self.rate(i, j)

    def pairs(self) -> tuple[tuple[str, str], ...]:
        """Ordered pairs with positive rate, in deterministic order."""
        return tuple(sorted(p for p, lam in self.rates.items() if lam > 0))

    def nodes(self) -> tuple[str, ...]:
        seen = {i for i, _ in self.rates} | {j for _, j in self.rates}
        return tuple(sorted(seen))

    def total_rate(self) -> float:
        return float(sum(self.rates.values()))

    def total_variance(self) -> float:
        return float(sum(self.variance(i, j) for i, j in self.rates))

    def scaled(self, factor: float) -> "DemandMatrix":
        rates = {p: lam * factor for p, lam in self.rates.items()}
        var = None
        if self.variances is not None:
            var = {p: v * factor for p, v in self.variances.items()}
        return DemandMatrix(rates, var)


def demand_to_csv(dm: DemandMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "rate", "variance"])
        for (i, j) in sorted(dm.rates):
            writer.writerow([i, j, repr(dm.rate(i, j)), repr(dm.variance(i, j))])


def demand_from_csv(path) -> DemandMatrix:
    rates: dict[tuple[str, str], float] = {}
    variances: dict[tuple[str, str], float] = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "i":
                continue
            i, j = row[0], row[1]
            rates[(i, j)] = float(row[2])
            if len(row) > 3 and row[3]:
                variances[(i, j)] = float(row[3])
    return DemandMatrix(rates, variances or None)


def check_circulation(dm: DemandMatrix, tol: float = CIRCULATION_TOL) -> bool:
    """True iff total outgoing rate equals total incoming rate at every node."""
    out: dict[str, float] = {}
    inc: dict[str, float] = {}
    for (i, j), lam in dm.rates.items():
        out[i] = out.get(i, 0.0) + lam
        inc[j] = inc.get(j, 0.0) + lam
    nodes = set(out) | set(inc)
    return all(abs(out.get(n, 0.0) - inc.get(n, 0.0)) <= tol for n in nodes)


@dataclass
class InfeasibilityCertificate:
    """Dual witness that no feasible allocation exists.

    beta (>= 0 per channel), gamma (free per channel) and zeta (per demand
    pair) satisfy the dual constraints while the dual objective is strictly
    negative, certifying primal infeasibility.
    """

    beta: dict[tuple[str, str], float]
    gamma: dict[tuple[str, str], float]
    zeta: dict[tuple[str, str], float]
    dual_objective: float

    def directed_duals(self, graph: PaymentGraph) -> tuple[dict[Edge, float], dict[Edge, float]]:
        """Per-directed-edge (beta, gamma) split of the per-channel duals."""
        beta_d: dict[Edge, float] = {}
        gamma_d: dict[Edge, float] = {}
        for (u, v, _c) in graph.channels:
            b = self.beta.get((u, v), 0.0)
            gmm = self.gamma.get((u, v), 0.0)
            beta_d[(u, v)] = beta_d[(v, u)] = b / 2.0
            gamma_d[(u, v)] = gmm / 2.0
            gamma_d[(v, u)] = -gmm / 2.0
        return beta_d, gamma_d


@dataclass
class CapacityCheck:
    feasible: bool
    x: dict[Path, float] | None = None
    certificate: InfeasibilityCertificate | None = None
    max_residual: float = 0.0


def _channel_incidence(graph: PaymentGraph, table: PathTable, columns: list[Path]):
    """Forward/backward channel usage per path column.

    Returns (use_fwd, use_bwd) as (n_channels x n_cols) dense arrays where
    fwd counts edges traversed in the channel's canonical direction.
    """
    n_ch = len(graph.channels)
    ch_index = {(u, v): k for k, (u, v, _c) in enumerate(graph.channels)}
    fwd = np.zeros((n_ch, len(columns)))
    bwd = np.zeros((n_ch, len(columns)))
    for col, p in enumerate(columns):
        for a, b in zip(p[:-1], p[1:]):
            if (a, b) in ch_index:
                fwd[ch_index[(a, b)], col] += 1.0
            else:
                bwd[ch_index[(b, a)], col] += 1.0
    return fwd, bwd


def check_capacity_region(
    dm: DemandMatrix,
    graph: PaymentGraph,
    table: PathTable,
    tol: float = FEASIBILITY_TOL,
) -> CapacityCheck:
    """Decide whether the demand admits a balanced, capacity-respecting allocation.

    Feasible: returns a nonnegative allocation x meeting each pair's rate
    exactly and satisfying the per-channel load and balance constraints
    within `tol`. Infeasible: returns a verified dual certificate with
    strictly negative dual objective.
    """
    pairs = dm.pairs()
    if not pairs:
        return CapacityCheck(feasible=True, x={}, max_residual=0.0)

    columns: list[Path] = []
    col_pair: list[int] = []
    for pi, (i, j) in enumerate(pairs):
        for p in table.paths(i, j):
            columns.append(p)
            col_pair.append(pi)
    col_pair_arr = np.array(col_pair)

    n_cols = len(columns)
    lam = np.array([dm.rate(i, j) for i, j in pairs])
    fwd, bwd = _channel_incidence(graph, table, columns)
    ch_caps = np.array([c for _u, _v, c in graph.channels], dtype=float)

    # Demand rows (equality), balance rows (equality), capacity rows (<=).
    a_eq_demand = np.zeros((len(pairs), n_cols))
    a_eq_demand[col_pair_arr, np.arange(n_cols)] = 1.0
    a_eq = np.vstack([a_eq_demand, fwd - bwd])
    b_eq = np.concatenate([lam, np.zeros(len(graph.channels))])
    a_ub = fwd + bwd
    b_ub = 2.0 * ch_caps

    res = linprog(
        c=np.zeros(n_cols), A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
        bounds=(0, None), method="highs",
    )
    if res.status == 0:
        x = np.maximum(res.x, 0.0)
        resid = max(
            float(np.abs(a_eq @ x - b_eq).max()),
            float(np.maximum(a_ub @ x - b_ub, 0.0).max()),
        )
        alloc = {p: float(x[c]) for c, p in enumerate(columns) if x[c] > 0}
        return CapacityCheck(feasible=True, x=alloc, max_residual=resid)

    cert = _infeasibility_certificate(dm, graph, table, pairs, columns, col_pair_arr)
    return CapacityCheck(feasible=False, certificate=cert)


def _infeasibility_certificate(
    dm: DemandMatrix,
    graph: PaymentGraph,
    table: PathTable,
    pairs,
    columns: list[Path],
    col_pair: np.ndarray,
) -> InfeasibilityCertificate:
    """Bounded dual LP: a negative optimum yields a scaled Farkas witness."""
    n_ch = len(graph.channels)
    n_pairs = len(pairs)
    lam = np.array([dm.rate(i, j) for i, j in pairs])
    ch_caps = np.array([c for _u, _v, c in graph.channels], dtype=float)
    fwd, bwd = _channel_incidence(graph, table, columns)

    # Variables: [beta (n_ch) >= 0, gamma (n_ch) free, zeta (n_pairs) free].
    # Constraint per path column: beta.(fwd+bwd) + gamma.(fwd-bwd) + zeta_pair >= 0.
    n_cols = len(columns)
    rows = np.zeros((n_cols, 2 * n_ch + n_pairs))
    rows[:, :n_ch] = (fwd + bwd).T
    rows[:, n_ch:2 * n_ch] = (fwd - bwd).T
    rows[np.arange(n_cols), 2 * n_ch + col_pair] = 1.0

    hop_bound = 2.0 * max(len(p) for p in columns)
    cost = np.concatenate([2.0 * ch_caps, np.zeros(n_ch), lam])
    bounds = (
        [(0.0, 1.0)] * n_ch
        + [(-1.0, 1.0)] * n_ch
        + [(-hop_bound, hop_bound)] * n_pairs
    )
    res = linprog(
        c=cost, A_ub=-rows, b_ub=np.zeros(n_cols), bounds=bounds, method="highs",
    )
    if res.status != 0:
        raise RuntimeError("certificate LP failed to solve")
    sol = res.x
    beta = {(u, v): float(sol[k]) for k, (u, v, _c) in enumerate(graph.channels)}
    gamma = {
        (u, v): float(sol[n_ch + k]) for k, (u, v, _c) in enumerate(graph.channels)
    }
    zeta = {pairs[k]: float(sol[2 * n_ch + k]) for k in range(n_pairs)}
    return InfeasibilityCertificate(
        beta=beta, gamma=gamma, zeta=zeta, dual_objective=float(res.fun)
    )


def verify_certificate(
    cert: InfeasibilityCertificate,
    dm: DemandMatrix,
    graph: PaymentGraph,
    table: PathTable,
    tol: float = 1e-7,
) -> bool:
    """Check the dual constraints and strict negativity of the objective."""
    if any(b < -tol for b in cert.beta.values()):
        return False
    if cert.dual_objective >= -tol:
        return False
    ch_index = {(u, v) for u, v, _c in graph.channels}
    for (i, j) in dm.pairs():
        zeta = cert.zeta.get((i, j), 0.0)
        for p in table.paths(i, j):
            total = zeta
            for a, b in zip(p[:-1], p[1:]):
                if (a, b) in ch_index:
                    total += cert.beta[(a, b)] + cert.gamma[(a, b)]
                else:
                    total += cert.beta[(b, a)] - cert.gamma[(b, a)]
            if total < -tol:
                return False
    return True


@dataclass
class FluidSolution:
    """Fluid path rates with the dual variables that produced them."""

    x: dict[Path, float]
    mu: dict[Edge, float]
    beta: dict[Edge, float]
    objective: float
    converged: bool
    iterations: int
    dual_objective: float
    dual_history: list[float] = field(default_factory=list, repr=False)

    def rate(self, path: Path) -> float:
        return float(self.x.get(path, 0.0))


def fluid_solve(
    dm: DemandMatrix,
    graph: PaymentGraph,
    table: PathTable,
    step_sizes: tuple[float, float] = (100.0, 100.0),
    max_iters: int = 20000,
    tol: float = 1e-6,
    window: int = 200,
    polish: bool = True,
    record_history: bool = False,
) -> FluidSolution:
    """Maximize routed throughput by projected dual descent.

    Each iteration scores every path by one unit of objective minus the dual
    prices of the balance and load constraints along it, routes each pair's
    full rate on its best path when that score is positive, then adjusts the
    balance duals by the resulting flow imbalance and the (projected,
    nonnegative) load duals by the overload. The primal is recovered from the
    averaged iterates; with `polish` the average is replaced by an exact
    max-throughput solve restricted to the support the descent discovered.
    """
    m1, m2 = step_sizes
    if m1 <= 0 or m2 <= 0:
        raise ValueError("step-size divisors must be positive")

    pairs = dm.pairs()
    mu = np.zeros(graph.n_edges)
    beta = np.zeros(graph.n_edges)
    if not pairs:
        return FluidSolution({}, _edge_dict(graph, mu), _edge_dict(graph, beta),
                             0.0, True, 0, 0.0)

    lam = np.array([dm.rate(i, j) for i, j in pairs])
    slices = [table.pair_slice(i, j) for i, j in pairs]
    path_ids = [
        [table.edge_ids(p) for p in table.paths(i, j)] for i, j in pairs
    ]
    rev = graph.reverse
    caps = graph.capacity.astype(float)

    x_accum = np.zeros(table.n_paths)
    history: list[float] = []
    best_dual = math.inf
    converged = False
    it = 0
    prev_window_mean: float | None = None

    while it < max_iters:
        it += 1
        w_edge = -mu + mu[rev] - beta - beta[rev]
        sums = 1.0 + table.weight_sums(w_edge)

        flows = np.zeros(graph.n_edges)
        dual_obj = 2.0 * float(beta @ caps)
        for k, sl in enumerate(slices):
            local = sums[sl]
            best = int(np.argmax(local))
            w_best = float(local[best])
            if w_best > 0.0:
                dual_obj += lam[k] * w_best
                flows[path_ids[k][best]] += lam[k]
                x_accum[sl.start + best] += lam[k]
        best_dual = min(best_dual, dual_obj)
        history.append(dual_obj)

        mu += (flows - flows[rev]) / m1
        beta = np.maximum(beta + (flows + flows[rev] - 2.0 * caps) / m2, 0.0)

        if it % window == 0:
            window_mean = float(np.mean(history[-window:]))
            if prev_window_mean is not None and abs(window_mean - prev_window_mean) < tol:
                converged = True
                break
            prev_window_mean = window_mean

    x_avg = x_accum / it
    x_map = {
        table.all_paths[c]: float(x_avg[c])
        for c in range(table.n_paths)
        if x_avg[c] > 0.0
    }
    if polish:
        polished = _polish_primal(dm, graph, table, pairs, x_avg, slices)
        if polished is not None:
            x_map = polished

    objective = float(sum(x_map.values()))
    return FluidSolution(
        x=x_map,
        mu=_edge_dict(graph, mu),
        beta=_edge_dict(graph, beta),
        objective=objective,
        converged=converged,
        iterations=it,
        dual_objective=best_dual,
        dual_history=history if record_history else [],
    )


def _edge_dict(graph: PaymentGraph, values: np.ndarray) -> dict[Edge, float]:
    return {e: float(values[k]) for k, e in enumerate(graph.edges)}


def _polish_primal(dm, graph, table, pairs, x_avg, slices) -> dict[Path, float] | None:
    """Exact throughput LP restricted to the support found by dual descent."""
    support: list[Path] = []
    support_pair: list[int] = []
    for k, (i, j) in enumerate(pairs):
        sl = slices[k]
        lam = dm.rate(i, j)
        thresh = 1e-4 * lam
        plist = table.paths(i, j)
        for off in range(sl.stop - sl.start):
            if x_avg[sl.start + off] > thresh:
                support.append(plist[off])
                support_pair.append(k)
    if not support:
        return {}

    n_cols = len(support)
    fwd, bwd = _channel_incidence(graph, table, support)
    ch_caps = np.array([c for _u, _v, c in graph.channels], dtype=float)
    a_demand = np.zeros((len(pairs), n_cols))
    a_demand[np.array(support_pair), np.arange(n_cols)] = 1.0
    lam_vec = np.array([dm.rate(i, j) for i, j in pairs])

    res = linprog(
        c=-np.ones(n_cols),
        A_ub=np.vstack([a_demand, fwd + bwd]),
        b_ub=np.concatenate([lam_vec, 2.0 * ch_caps]),
        A_eq=fwd - bwd,
        b_eq=np.zeros(len(graph.channels)),
        bounds=(0, None),
        method="highs",
    )
    if res.status != 0:
        return None
    x = np.maximum(res.x, 0.0)
    return {p: float(x[c]) for c, p in enumerate(support) if x[c] > 1e-12}


def fluid_to_csv(solution: FluidSolution, paths_path, duals_path) -> None:
    """Serialize path rates and per-edge duals."""
    with open(paths_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "rate"])
        for p in sorted(solution.x):
            writer.writerow(["-".join(p), repr(solution.x[p])])
    with open(duals_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "v", "mu", "beta"])
        for (u, v) in sorted(solution.mu):
            writer.writerow([u, v, repr(solution.mu[(u, v)]), repr(solution.beta[(u, v)])])


def lemma1_check(
    state,
    dm: DemandMatrix,
    graph: PaymentGraph,
    table: PathTable,
    delta: float,
    alpha: float,
    tol: float = 1e-9,
    check_feasibility: bool = True,
) -> bool:
    """Rate-weighted minimum path weight never exceeds the scaled queue mass.

    Holds for every queue state whenever the demand is inside the capacity
    region; a counterexample indicates either infeasible demand or a weight
    computation bug.
    """
    if check_feasibility:
        if not check_capacity_region(dm, graph, table).feasible:
            raise InfeasibleDemand("demand matrix is outside the capacity region")
    from .policy import edge_weight_vector

    w = edge_weight_vector(state, graph, delta, alpha)
    sums = table.weight_sums(w)
    lhs = 0.0
    for (i, j) in dm.pairs():
        sl = table.pair_slice(i, j)
        lhs += dm.rate(i, j) * float(sums[sl].min())
    rhs = float((delta / alpha) * state.q.sum())
    return lhs <= rhs + tol


def theorem1_bound(
    graph: PaymentGraph,
    dm: DemandMatrix,
    delta: float,
    alpha: float,
    threshold: float,
) -> float:
    """Steady-state upper bound on the expected total queue length.

    Requires threshold > c_max, delta in (0, 1], alpha > 1 and delta below
    the threshold. Scales as O(1/delta^2), against an on-chain rate of
    O(delta): halving delta quadruples the dominant term.
    """
    c_max, c_min = graph.c_max, graph.c_min
    if not (threshold > c_max):
        raise ParameterViolation("threshold must exceed the largest capacity")
    if not (0.0 < delta <= 1.0):
        raise ParameterViolation("delta must lie in (0, 1]")
    if not (alpha > 1.0):
        raise ParameterViolation("alpha must exceed 1")
    if not (delta < threshold):
        raise ParameterViolation("delta must be below the threshold")

    m = graph.n_edges
    sigma_total = dm.total_variance()
    cap_sq = float(sum(c * c for _u, _v, c in graph.channels))
    return (
        (12.0 * m * sigma_total + 2.0 * cap_sq) * (alpha * c_max / delta**2)
        + 12.0 * m * (alpha * c_max / delta)
        + 4.0 * alpha * c_max * m * (threshold / delta)
        + (c_max * m / c_min) * threshold
    )
