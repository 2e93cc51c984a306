"""Namespaced key=value run configuration for the command-line tools.

Configs are plain-text files of `section.key = value` lines (# comments
allowed). Unknown keys are rejected by name so a typo cannot silently fall
back to a default; command-line `--set key=value` overrides file values.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .engine import FluidOptions, SimConfig
from .fluid import DemandMatrix, demand_from_csv
from .policy import POLICY_NAMES, PolicyParams
from .topology import PaymentGraph, build_graph, load_topology_csv
from .workload import gen_demand_matrix, load_transactions_csv


class ConfigError(ValueError):
    pass


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


# key -> (parser, help)
SCHEMA: dict[str, tuple] = {
    "topology.file": (str, "topology CSV path (u,v,capacity per channel)"),
    "topology.inline": (str, "inline channels, e.g. 'A,B,5;B,C,3'"),
    "workload.total_rate": (float, "generate a balanced demand matrix with this grand sum"),
    "workload.demand_file": (str, "demand CSV path (i,j,rate[,variance])"),
    "workload.transactions_file": (str, "transaction trace CSV (src,dst,amount[,slot])"),
    "workload.amount_cap": (int, "drop trace transactions above this value"),
    "workload.shuffle": (_parse_bool, "shuffle trace order with the run seed"),
    "workload.utilization": (float, "scale demand to this fraction of the capacity region"),
    "policy.name": (str, "exact | heuristic | waterfilling | fluid"),
    "policy.threshold": (int, "on-chain trigger level M"),
    "policy.delta": (float, "rebalancing probability in [0,1]"),
    "policy.alpha": (float, "load-term damping, > 1"),
    "policy.k": (int, "heuristic candidate-path budget"),
    "policy.packet_size": (int, "water-filling packet value"),
    "paths.max_hops": (int, "path enumeration hop cap"),
    "run.horizon": (int, "number of slots"),
    "run.seed": (int, "master seed for all randomness"),
    "run.service_timing": (str, "post_arrival | pre_arrival"),
    "run.drop_onchain": (_parse_bool, "reject transactions instead of rebalancing"),
    "run.sample_interval": (int, "metric sampling interval in slots"),
    "run.warmup_frac": (float, "fraction of slots discarded for steady-state metrics"),
    "fluid.m1": (float, "balance-dual step divisor"),
    "fluid.m2": (float, "load-dual step divisor"),
    "fluid.max_iters": (int, "dual-descent iteration cap"),
    "fluid.tol": (float, "dual-objective convergence tolerance"),
    "fluid.window": (int, "convergence window length"),
    "fluid.polish": (_parse_bool, "exact solve on the discovered support"),
}

DEFAULT_OUTPUT_ENV = "PCNSIM_OUT"


def parse_assignment(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"expected key=value, got {text!r}")
    key, _, raw = text.partition("=")
    return key.strip(), raw.strip()


def load_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, raw = parse_assignment(body)
        if key not in SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = raw
    return values


def apply_cli_overrides(values: dict[str, str], assignments) -> dict[str, str]:
    merged = dict(values)
    for text in assignments or ():
        key, raw = parse_assignment(text)
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = raw
    return merged


def typed(values: dict[str, str]) -> dict[str, object]:
    out: dict[str, object] = {}
    for key, raw in values.items():
        parser = SCHEMA[key][0]
        try:
            out[key] = parser(raw)
        except ConfigError:
            raise
        except ValueError:
            raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return out


def write_config(values: dict[str, str], path) -> None:
    lines = [f"{key} = {values[key]}" for key in sorted(values)]
    Path(path).write_text("\n".join(lines) + "\n")


def _build_graph_from(cfg: dict[str, object], base_dir: Path) -> PaymentGraph:
    if "topology.file" in cfg and "topology.inline" in cfg:
        raise ConfigError("give either topology.file or topology.inline, not both")
    if "topology.file" in cfg:
        return load_topology_csv(base_dir / str(cfg["topology.file"]))
    if "topology.inline" in cfg:
        channels = []
        for part in str(cfg["topology.inline"]).split(";"):
            fields = [f.strip() for f in part.split(",")]
            if len(fields) != 3:
                raise ConfigError(f"bad inline channel {part!r}")
            channels.append((fields[0], fields[1], int(fields[2])))
        return build_graph(channels)
    raise ConfigError("config needs topology.file or topology.inline")


def build_sim_config(cfg: dict[str, object], base_dir) -> SimConfig:
    """Materialize a SimConfig (graph, workload, params) from typed values."""
    base_dir = Path(base_dir)
    graph = _build_graph_from(cfg, base_dir)

    policy = str(cfg.get("policy.name", ""))
    if policy not in POLICY_NAMES:
        raise ConfigError(
            f"unknown policy {policy!r}; valid policies: {', '.join(POLICY_NAMES)}"
        )

    params = PolicyParams(
        threshold=cfg.get("policy.threshold"),
        delta=float(cfg.get("policy.delta", 0.1)),
        alpha=float(cfg.get("policy.alpha", 2.0)),
        k=int(cfg.get("policy.k", 1)),
        packet_size=int(cfg.get("policy.packet_size", 1)),
    )

    seed = int(cfg.get("run.seed", 0))
    demand, trace = resolve_workload(cfg, base_dir, graph, seed)

    fluid = FluidOptions(
        m1=float(cfg.get("fluid.m1", 100.0)),
        m2=float(cfg.get("fluid.m2", 100.0)),
        max_iters=int(cfg.get("fluid.max_iters", 20000)),
        tol=float(cfg.get("fluid.tol", 1e-6)),
        window=int(cfg.get("fluid.window", 200)),
        polish=bool(cfg.get("fluid.polish", True)),
    )

    return SimConfig(
        graph=graph,
        policy=policy,
        params=params,
        horizon=cfg.get("run.horizon"),
        seed=seed,
        demand=demand,
        trace=trace,
        service_timing=str(cfg.get("run.service_timing", "post_arrival")),
        drop_onchain=bool(cfg.get("run.drop_onchain", True)),
        sample_interval=int(cfg.get("run.sample_interval", 1)),
        warmup_frac=float(cfg.get("run.warmup_frac", 0.1)),
        max_hops=cfg.get("paths.max_hops"),
        shuffle_trace=bool(cfg.get("workload.shuffle", False)),
        fluid=fluid,
    )


def resolve_workload(cfg, base_dir: Path, graph: PaymentGraph, seed: int):
    """Demand matrix and/or trace per the workload.* keys."""
    demand: DemandMatrix | None = None
    trace = None
    if "workload.demand_file" in cfg:
        demand = demand_from_csv(base_dir / str(cfg["workload.demand_file"]))
    elif "workload.total_rate" in cfg:
        demand = gen_demand_matrix(
            graph.n_vertices,
            float(cfg["workload.total_rate"]),
            np.random.default_rng(np.random.SeedSequence([seed, 0xDE])),
            vertices=graph.vertices,
        )
    if "workload.utilization" in cfg:
        if demand is None:
            raise ConfigError("workload.utilization needs a demand matrix")
        from .topology import PathTable, default_max_hops
        from .workload import scale_to_capacity

        hops = cfg.get("paths.max_hops", default_max_hops(graph))
        table = PathTable(graph, int(hops))
        demand = scale_to_capacity(
            demand, graph, table, utilization=float(cfg["workload.utilization"])
        )
    if "workload.transactions_file" in cfg:
        trace = load_transactions_csv(
            base_dir / str(cfg["workload.transactions_file"]),
            graph=graph,
            amount_cap=cfg.get("workload.amount_cap"),
        )
    if demand is None and trace is None:
        raise ConfigError(
            "config needs workload.total_rate, workload.demand_file or "
            "workload.transactions_file"
        )
    return demand, trace


def default_output_dir(cli_value: str | None) -> Path:
    if cli_value:
        return Path(cli_value)
    return Path(os.environ.get(DEFAULT_OUTPUT_ENV, "pcnsim-out"))
