"""Discrete-time simulation loop binding workload, policy and ledger.

Each slot draws (or ingests) a transaction batch, asks the policy for a
routing decision, applies the exact queue step, and records metrics. Two
integer conservation identities are asserted every slot: offered value
splits exactly into routed/on-chain/rejected, and queue mass moves exactly
by arrivals minus service minus rebalancing.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .fluid import DemandMatrix, fluid_solve
from .ledger import ChannelState, NegativeQueue, aggregate_flow
from .policy import (
    POLICY_NAMES,
    ExactPolicy,
    FluidPolicy,
    HeuristicPolicy,
    PolicyParams,
    WaterfillingPolicy,
)
from .topology import PathTable, PaymentGraph, default_max_hops
from .workload import TraceSource, TransactionBatch, gen_arrivals


@dataclass(frozen=True)
class FluidOptions:
    """Dual-descent settings used when the fluid policy needs a solution."""

    m1: float = 100.0
    m2: float = 100.0
    max_iters: int = 20000
    tol: float = 1e-6
    window: int = 200
    polish: bool = True


@dataclass(frozen=True)
class SimConfig:
    graph: PaymentGraph
    policy: str
    params: PolicyParams
    horizon: int | None = None
    seed: int = 0
    demand: DemandMatrix | None = None
    trace: TraceSource | None = None
    service_timing: str = "post_arrival"
    drop_onchain: bool = True
    sample_interval: int = 1
    warmup_frac: float = 0.1
    max_hops: int | None = None
    shuffle_trace: bool = False
    fluid: FluidOptions = field(default_factory=FluidOptions)
    label: str = ""

    def resolved_horizon(self) -> int:
        if self.horizon is not None:
            if self.horizon < 1:
                raise ValueError("horizon must be >= 1")
            return self.horizon
        if self.trace is not None:
            return self.trace.n_slots()
        raise ValueError("horizon is required for generated workloads")


@dataclass
class SimMetrics:
    """Scalar outcomes plus sampled time series for one run."""

    success_ratio: float
    success_volume: int
    avg_imbalance_per_edge: float
    onchain_rate: float
    mean_total_queue: float
    offered_count: int
    offered_volume: int
    accepted_count: int
    rejected_count: int
    rejected_volume: int
    onchain_count: int
    onchain_volume: int
    rebalance_units: int
    horizon: int
    warmup_slots: int
    series: dict[str, np.ndarray]
    slot_data: dict[str, np.ndarray]
    final_state: ChannelState
    info: dict[str, object]

    def scalar_items(self) -> list[tuple[str, object]]:
        return [
            ("success_ratio", self.success_ratio),
            ("success_volume", self.success_volume),
            ("avg_imbalance_per_edge", self.avg_imbalance_per_edge),
            ("onchain_rate", self.onchain_rate),
            ("mean_total_queue", self.mean_total_queue),
            ("offered_count", self.offered_count),
            ("offered_volume", self.offered_volume),
            ("accepted_count", self.accepted_count),
            ("rejected_count", self.rejected_count),
            ("rejected_volume", self.rejected_volume),
            ("onchain_count", self.onchain_count),
            ("onchain_volume", self.onchain_volume),
            ("rebalance_units", self.rebalance_units),
            ("horizon", self.horizon),
        ]


def _build_policy(config: SimConfig, table: PathTable | None):
    name = config.policy
    if name == "exact":
        return ExactPolicy(config.graph, table, config.params)
    if name == "heuristic":
        return HeuristicPolicy(config.graph, config.params)
    if name == "waterfilling":
        return WaterfillingPolicy(config.graph, table, config.params)
    if name == "fluid":
        if config.demand is None:
            raise ValueError("fluid policy requires a demand matrix")
        opts = config.fluid
        solution = fluid_solve(
            config.demand, config.graph, table,
            step_sizes=(opts.m1, opts.m2), max_iters=opts.max_iters,
            tol=opts.tol, window=opts.window, polish=opts.polish,
        )
        return FluidPolicy(config.graph, table, config.params, solution, config.demand)
    raise ValueError(f"unknown policy {name!r}; valid policies: {', '.join(POLICY_NAMES)}")


def run(
    config: SimConfig,
    observer: Callable[[int, ChannelState], None] | None = None,
) -> SimMetrics:
    """Execute one simulation run; deterministic given (config, seed)."""
    if config.demand is None and config.trace is None:
        raise ValueError("config needs a demand matrix or a trace")
    if config.sample_interval < 1:
        raise ValueError("sample_interval must be >= 1")
    horizon = config.resolved_horizon()

    seeds = np.random.SeedSequence(config.seed).spawn(3)
    rng_arrivals = np.random.default_rng(seeds[0])
    rng_policy = np.random.default_rng(seeds[1])

    graph = config.graph
    needs_table = config.policy in ("exact", "waterfilling", "fluid")
    table = (
        PathTable(graph, config.max_hops if config.max_hops is not None
                  else default_max_hops(graph))
        if needs_table else None
    )
    policy = _build_policy(config, table)
    state = ChannelState(graph)

    trace_batches = None
    if config.trace is not None:
        trace = config.trace
        if config.shuffle_trace:
            trace = trace.shuffled(np.random.default_rng(seeds[2]))
        trace_batches = trace.batches(horizon)

    cols = [
        "offered_count", "offered_volume", "accepted_count", "accepted_volume",
        "rejected_count", "rejected_volume", "onchain_count", "onchain_volume",
        "rebalance_units", "total_queue",
    ]
    slot_data = {c: np.zeros(horizon, dtype=np.int64) for c in cols}
    sample_ts: list[int] = []
    sample_imbalance: list[float] = []

    for t in range(horizon):
        if trace_batches is not None:
            batch = next(trace_batches, TransactionBatch(t, ()))
        else:
            batch = gen_arrivals(config.demand, t, rng_arrivals)

        decision = policy.route(
            state, batch, rng_policy,
            drop=config.drop_onchain, timing=config.service_timing,
        )

        y = aggregate_flow(decision.path_flows, graph)
        r = decision.rebalance_vector(graph) if decision.rebalance else None
        q_before = int(state.q.sum())
        try:
            s = state.step(y, r, timing=config.service_timing)
        except NegativeQueue:
            state.dump_csv("negative_queue_dump.csv")
            raise

        offered_vol = batch.offered_volume()
        rejected_vol = decision.rejected_volume()
        onchain_vol = decision.onchain_volume()
        routed_vol = offered_vol - rejected_vol - onchain_vol
        # Decision conservation: every offered unit is routed, on-chain or rejected.
        assert decision.routed_volume() == routed_vol, "decision volume mismatch"
        # Ledger conservation: queue mass moves exactly by y - s - r.
        r_total = int(r.sum()) if r is not None else 0
        assert int(state.q.sum()) - q_before == int(y.sum()) - int(s.sum()) - r_total, \
            "queue mass mismatch"

        slot_data["offered_count"][t] = len(batch)
        slot_data["offered_volume"][t] = offered_vol
        slot_data["accepted_count"][t] = decision.accepted_count
        slot_data["accepted_volume"][t] = routed_vol
        slot_data["rejected_count"][t] = decision.rejected_count
        slot_data["rejected_volume"][t] = rejected_vol
        slot_data["onchain_count"][t] = decision.onchain_count
        slot_data["onchain_volume"][t] = onchain_vol
        slot_data["rebalance_units"][t] = r_total
        slot_data["total_queue"][t] = int(state.q.sum())

        if (t + 1) % config.sample_interval == 0 or t == horizon - 1:
            sample_ts.append(t + 1)
            sample_imbalance.append(float(np.abs(state.imbalance_vector()).mean()))
            if observer is not None:
                observer(t, state)

    return _finalize(config, horizon, slot_data, sample_ts, sample_imbalance, state)


def _finalize(config, horizon, slot_data, sample_ts, sample_imbalance, state) -> SimMetrics:
    warmup = int(config.warmup_frac * horizon)
    offered_count = int(slot_data["offered_count"].sum())
    accepted_count = int(slot_data["accepted_count"].sum())
    onchain_units = slot_data["rebalance_units"] + slot_data["onchain_volume"]
    post = slice(warmup, None)

    ts = np.array(sample_ts, dtype=np.int64)
    cum_offered = np.cumsum(slot_data["offered_count"])
    cum_accepted = np.cumsum(slot_data["accepted_count"])
    with np.errstate(invalid="ignore", divide="ignore"):
        cum_ratio = np.where(cum_offered > 0, cum_accepted / np.maximum(cum_offered, 1), 1.0)

    window_ratio = []
    prev_t = 0
    for t_now in ts:
        off = slot_data["offered_count"][prev_t:t_now].sum()
        acc = slot_data["accepted_count"][prev_t:t_now].sum()
        window_ratio.append(float(acc / off) if off > 0 else 1.0)
        prev_t = t_now

    series = {
        "t": ts,
        "total_queue": slot_data["total_queue"][ts - 1],
        "success_ratio_cum": cum_ratio[ts - 1],
        "success_ratio_window": np.array(window_ratio),
        "success_volume_cum": np.cumsum(slot_data["accepted_volume"])[ts - 1],
        "onchain_units_cum": np.cumsum(onchain_units)[ts - 1],
        "avg_imbalance": np.array(sample_imbalance),
    }

    denom = max(horizon - warmup, 1)
    info = {
        "policy": config.policy,
        "seed": config.seed,
        "threshold": config.params.threshold,
        "delta": config.params.delta,
        "alpha": config.params.alpha,
        "k": config.params.k,
        "packet_size": config.params.packet_size,
        "drop_onchain": config.drop_onchain,
        "service_timing": config.service_timing,
        "n_edges": config.graph.n_edges,
        "label": config.label,
    }
    return SimMetrics(
        success_ratio=float(accepted_count / offered_count) if offered_count else 1.0,
        success_volume=int(slot_data["accepted_volume"].sum()),
        avg_imbalance_per_edge=float(np.abs(state.imbalance_vector()).mean()),
        onchain_rate=float(onchain_units[post].sum() / denom),
        mean_total_queue=float(slot_data["total_queue"][post].mean()),
        offered_count=offered_count,
        offered_volume=int(slot_data["offered_volume"].sum()),
        accepted_count=accepted_count,
        rejected_count=int(slot_data["rejected_count"].sum()),
        rejected_volume=int(slot_data["rejected_volume"].sum()),
        onchain_count=int(slot_data["onchain_count"].sum()),
        onchain_volume=int(slot_data["onchain_volume"].sum()),
        rebalance_units=int(slot_data["rebalance_units"].sum()),
        horizon=horizon,
        warmup_slots=warmup,
        series=series,
        slot_data=slot_data,
        final_state=state,
        info=info,
    )


@dataclass
class StabilityReport:
    """Queue-bound and on-chain-rate diagnostics for a completed run."""

    mean_total_queue: float
    queue_bound: float
    queue_within_bound: bool
    onchain_rate: float
    onchain_limit: float
    onchain_se: float
    onchain_within_limit: bool
    growth_ratios: dict[int, float]
    growth_slope: float
    growth_relative_spread: float

    def render(self) -> str:
        lines = [
            f"mean total queue {self.mean_total_queue:.3f} vs bound {self.queue_bound:.3f}"
            f" -> {'OK' if self.queue_within_bound else 'VIOLATED'}",
            f"on-chain rate {self.onchain_rate:.5f} vs limit {self.onchain_limit:.5f}"
            f" (+3se={3 * self.onchain_se:.5f})"
            f" -> {'OK' if self.onchain_within_limit else 'VIOLATED'}",
            f"queue growth slope {self.growth_slope:.5f} units/slot",
        ]
        for t, ratio in sorted(self.growth_ratios.items()):
            lines.append(f"  sum_q({t})/{t} = {ratio:.5f}")
        return "\n".join(lines)


def stability_diagnostic(metrics: SimMetrics, bound: float) -> StabilityReport:
    """Compare a run against the steady-state queue bound and on-chain limit.

    Meant for runs without transaction dropping (queues unbounded). Also
    reports the linear growth rate of the total queue, the instability
    witness for demand outside the capacity region.
    """
    tq = metrics.slot_data["total_queue"]
    onchain = metrics.slot_data["rebalance_units"] + metrics.slot_data["onchain_volume"]
    warm = metrics.warmup_slots
    post = onchain[warm:]
    se = float(post.std(ddof=1) / np.sqrt(len(post))) if len(post) > 1 else 0.0
    limit = float(metrics.info["delta"]) * int(metrics.info["n_edges"])

    horizon = metrics.horizon
    checkpoints = sorted({max(1, horizon // 4), max(1, horizon // 2), horizon})
    ratios = {t: float(tq[t - 1] / t) for t in checkpoints}
    t_axis = np.arange(1, horizon + 1, dtype=float)
    slope = float(np.polyfit(t_axis, tq.astype(float), 1)[0]) if horizon > 1 else 0.0
    vals = np.array(list(ratios.values()))
    spread = float((vals.max() - vals.min()) / vals.max()) if vals.max() > 0 else 0.0

    rate = float(post.mean()) if len(post) else 0.0
    return StabilityReport(
        mean_total_queue=metrics.mean_total_queue,
        queue_bound=float(bound),
        queue_within_bound=metrics.mean_total_queue <= bound,
        onchain_rate=rate,
        onchain_limit=limit,
        onchain_se=se,
        onchain_within_limit=rate <= limit + 3 * se,
        growth_ratios=ratios,
        growth_slope=slope,
        growth_relative_spread=spread,
    )


_OVERRIDE_KEYS = {
    "policy.name", "policy.threshold", "policy.delta", "policy.alpha",
    "policy.k", "policy.packet_size",
    "run.horizon", "run.seed", "run.drop_onchain", "run.service_timing",
    "run.sample_interval", "run.warmup_frac",
    "topology.uniform_capacity",
}


def apply_overrides(config: SimConfig, overrides: Mapping[str, object]) -> SimConfig:
    """New config with dotted-key overrides applied (sweep grid points)."""
    cfg = config
    params = config.params
    for key, value in overrides.items():
        if key not in _OVERRIDE_KEYS:
            raise KeyError(f"unknown override key {key!r}")
        if key == "policy.name":
            cfg = replace(cfg, policy=str(value))
        elif key == "policy.threshold":
            params = replace(params, threshold=int(value))
        elif key == "policy.delta":
            params = replace(params, delta=float(value))
        elif key == "policy.alpha":
            params = replace(params, alpha=float(value))
        elif key == "policy.k":
            params = replace(params, k=int(value))
        elif key == "policy.packet_size":
            params = replace(params, packet_size=int(value))
        elif key == "run.horizon":
            cfg = replace(cfg, horizon=int(value))
        elif key == "run.seed":
            cfg = replace(cfg, seed=int(value))
        elif key == "run.drop_onchain":
            cfg = replace(cfg, drop_onchain=bool(value))
        elif key == "run.service_timing":
            cfg = replace(cfg, service_timing=str(value))
        elif key == "run.sample_interval":
            cfg = replace(cfg, sample_interval=int(value))
        elif key == "run.warmup_frac":
            cfg = replace(cfg, warmup_frac=float(value))
        elif key == "topology.uniform_capacity":
            cfg = replace(cfg, graph=cfg.graph.with_uniform_capacity(int(value)))
    return replace(cfg, params=params)


def _run_point(args: tuple[SimConfig, Mapping[str, object]]):
    config, overrides = args
    return run(apply_overrides(config, overrides))


def sweep(
    config: SimConfig,
    grid: Sequence[Mapping[str, object]],
    jobs: int = 1,
) -> list[tuple[Mapping[str, object], SimMetrics]]:
    """One run per grid point (dicts of dotted-key overrides), in grid order.

    Runs may execute in parallel; results are merged deterministically in
    grid order regardless of the job count.
    """
    points = [(config, dict(overrides)) for overrides in grid]
    if not points:
        return []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            metrics = list(pool.map(_run_point, points))
    else:
        metrics = [_run_point(p) for p in points]
    return [(overrides, m) for (_cfg, overrides), m in zip(points, metrics)]


def grid_product(axes: Mapping[str, Sequence[object]]) -> list[dict[str, object]]:
    """Cartesian product of override axes, in deterministic order."""
    keys = list(axes)
    points: list[dict[str, object]] = [{}]
    for key in keys:
        points = [dict(p, **{key: v}) for p in points for v in axes[key]]
    return points


def write_metrics_csv(metrics: SimMetrics, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key, value in sorted(metrics.info.items()):
            writer.writerow([f"config.{key}", value])
        for key, value in metrics.scalar_items():
            writer.writerow([key, repr(value) if isinstance(value, float) else value])


def write_timeseries_csv(metrics: SimMetrics, path) -> None:
    series = metrics.series
    names = ["t", "total_queue", "success_ratio_cum", "success_ratio_window",
             "success_volume_cum", "onchain_units_cum", "avg_imbalance"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in zip(*(series[name] for name in names)):
            writer.writerow([
                val if isinstance(val, (int, np.integer)) else repr(float(val))
                for val in row
            ])


def write_sweep_csv(
    results: Sequence[tuple[Mapping[str, object], SimMetrics]], path
) -> None:
    """Tidy CSV: one row per grid point per scalar metric."""
    keys = sorted({k for overrides, _m in results for k in overrides})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([*keys, "metric", "value"])
        for overrides, metrics in results:
            prefix = [overrides.get(k, "") for k in keys]
            for name, value in metrics.scalar_items():
                writer.writerow(
                    [*prefix, name, repr(value) if isinstance(value, float) else value]
                )
