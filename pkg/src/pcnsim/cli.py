"""Command-line interface: simulate, sweep, fluid-solve, check-capacity, gen-workload."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    apply_cli_overrides,
    build_sim_config,
    default_output_dir,
    load_config_file,
    typed,
    write_config,
)
from .engine import (
    grid_product,
    run,
    sweep,
    write_metrics_csv,
    write_sweep_csv,
    write_timeseries_csv,
)
from .fluid import check_capacity_region, demand_to_csv, fluid_solve, fluid_to_csv
from .topology import NoPathExists, PathTable, TopologyError, default_max_hops, save_topology_csv
from .workload import ParseError, TraceSource, UnknownEndpoint, gen_arrivals, save_transactions_csv

USAGE_ERROR = 1
DATA_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        raise SystemExit(self._usage_exit(message))

    def _usage_exit(self, message):
        print(f"error: {message}", file=sys.stderr)
        return USAGE_ERROR


def _build_parser() -> _Parser:
    parser = _Parser(prog="pcnsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="config file path")
        p.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("--out", help="output directory (default: $PCNSIM_OUT or ./pcnsim-out)")
        p.add_argument("--seed", type=int, help="shorthand for --set run.seed=N")

    p_sim = sub.add_parser("simulate", help="run one simulation")
    common(p_sim)
    p_sim.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True,
                       help="render PNG figures next to the CSVs")

    p_sweep = sub.add_parser("sweep", help="run a parameter grid")
    common(p_sweep)
    p_sweep.add_argument("--grid", action="append", required=True, metavar="KEY=V1,V2,...",
                         help="sweep axis (repeatable; cartesian product)")
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel runs")
    p_sweep.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)

    p_fluid = sub.add_parser("fluid-solve", help="solve the fluid throughput model")
    common(p_fluid)

    p_cap = sub.add_parser("check-capacity", help="test demand against the capacity region")
    common(p_cap)

    p_gen = sub.add_parser("gen-workload", help="materialize a demand matrix / arrival trace")
    common(p_gen)
    p_gen.add_argument("--slots", type=int, default=0,
                       help="also sample this many slots of arrivals into a trace CSV")
    return parser


def _load(args) -> tuple[dict, Path]:
    values = load_config_file(args.config)
    values = apply_cli_overrides(values, args.overrides)
    if args.seed is not None:
        values["run.seed"] = str(args.seed)
    return typed(values), Path(args.config).resolve().parent


def _outdir(args) -> Path:
    out = default_output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _grid_axes(specs) -> dict[str, list[object]]:
    axes: dict[str, list[object]] = {}
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"bad grid spec {spec!r}; expected key=v1,v2")
        key, _, raw = spec.partition("=")
        values: list[object] = []
        for piece in raw.split(","):
            piece = piece.strip()
            try:
                values.append(int(piece))
            except ValueError:
                try:
                    values.append(float(piece))
                except ValueError:
                    values.append(piece)
        axes[key.strip()] = values
    return axes


def cmd_simulate(args) -> int:
    cfg, base = _load(args)
    sim = build_sim_config(cfg, base)
    out = _outdir(args)
    metrics = run(sim)
    write_metrics_csv(metrics, out / "metrics.csv")
    write_timeseries_csv(metrics, out / "timeseries.csv")
    metrics.final_state.dump_csv(out / "final_state.csv")
    if args.figures:
        from .report import plot_run

        plot_run(metrics, out)
    print(
        f"policy={metrics.info['policy']} T={metrics.horizon} "
        f"success_ratio={metrics.success_ratio:.4f}"
    )
    return 0


def cmd_sweep(args) -> int:
    cfg, base = _load(args)
    sim = build_sim_config(cfg, base)
    axes = _grid_axes(args.grid)
    grid = grid_product(axes)
    out = _outdir(args)
    results = sweep(sim, grid, jobs=args.jobs)
    write_sweep_csv(results, out / "sweep.csv")
    if args.figures:
        from .report import plot_sweep

        plot_sweep(results, out)
    ratios = [m.success_ratio for _o, m in results]
    mean_ratio = float(np.mean(ratios)) if ratios else float("nan")
    print(f"policy={sim.policy} points={len(results)} mean_success_ratio={mean_ratio:.4f}")
    return 0


def _table_for(sim):
    hops = sim.max_hops if sim.max_hops is not None else default_max_hops(sim.graph)
    return PathTable(sim.graph, hops)


def cmd_fluid_solve(args) -> int:
    cfg, base = _load(args)
    cfg.setdefault("policy.name", "fluid")
    sim = build_sim_config(cfg, base)
    if sim.demand is None:
        raise ConfigError("fluid-solve needs a demand matrix workload")
    out = _outdir(args)
    table = _table_for(sim)
    sol = fluid_solve(
        sim.demand, sim.graph, table,
        step_sizes=(sim.fluid.m1, sim.fluid.m2), max_iters=sim.fluid.max_iters,
        tol=sim.fluid.tol, window=sim.fluid.window, polish=sim.fluid.polish,
    )
    fluid_to_csv(sol, out / "fluid_paths.csv", out / "fluid_duals.csv")
    print(
        f"objective={sol.objective:.6f} converged={sol.converged} "
        f"iterations={sol.iterations}"
    )
    return 0


def cmd_check_capacity(args) -> int:
    cfg, base = _load(args)
    cfg.setdefault("policy.name", "exact")
    sim = build_sim_config(cfg, base)
    if sim.demand is None:
        raise ConfigError("check-capacity needs a demand matrix workload")
    out = _outdir(args)
    table = _table_for(sim)
    res = check_capacity_region(sim.demand, sim.graph, table)
    if res.feasible:
        path = out / "allocation.csv"
        with open(path, "w", newline="") as fh:
            fh.write("path,rate\n")
            for p in sorted(res.x):
                fh.write(f"{'-'.join(p)},{res.x[p]!r}\n")
        print(f"feasible {path}")
    else:
        cert = res.certificate
        path = out / "certificate.csv"
        with open(path, "w", newline="") as fh:
            fh.write("kind,u,v,value\n")
            for (u, v) in sorted(cert.beta):
                fh.write(f"beta,{u},{v},{cert.beta[(u, v)]!r}\n")
            for (u, v) in sorted(cert.gamma):
                fh.write(f"gamma,{u},{v},{cert.gamma[(u, v)]!r}\n")
            for (i, j) in sorted(cert.zeta):
                fh.write(f"zeta,{i},{j},{cert.zeta[(i, j)]!r}\n")
            fh.write(f"dual_objective,,,{cert.dual_objective!r}\n")
        print(f"infeasible {path}")
    return 0


def cmd_gen_workload(args) -> int:
    cfg, base = _load(args)
    cfg.setdefault("policy.name", "exact")
    sim = build_sim_config(cfg, base)
    if sim.demand is None:
        raise ConfigError("gen-workload needs workload.total_rate or workload.demand_file")
    out = _outdir(args)

    save_topology_csv(sim.graph, out / "topology.csv")
    demand_to_csv(sim.demand, out / "demand.csv")

    derived = {
        "topology.file": "topology.csv",
        "workload.demand_file": "demand.csv",
        "policy.name": sim.policy,
        "policy.delta": repr(sim.params.delta),
        "policy.alpha": repr(sim.params.alpha),
        "run.seed": str(sim.seed),
    }
    if sim.params.threshold is not None:
        derived["policy.threshold"] = str(sim.params.threshold)

    if args.slots > 0:
        rng = np.random.default_rng(np.random.SeedSequence([sim.seed, 0xA11]))
        entries = []
        slots = []
        for t in range(args.slots):
            for (i, j, amount) in gen_arrivals(sim.demand, t, rng).entries:
                entries.append((i, j, amount))
                slots.append(t)
        save_transactions_csv(
            TraceSource(entries=entries, slots=slots), out / "transactions.csv"
        )
        derived["workload.transactions_file"] = "transactions.csv"
        derived["run.horizon"] = str(args.slots)
    else:
        derived["run.horizon"] = str(sim.horizon if sim.horizon else 1000)

    write_config(derived, out / "generated.cfg")
    print(f"workload written to {out}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "fluid-solve": cmd_fluid_solve,
    "check-capacity": cmd_check_capacity,
    "gen-workload": cmd_gen_workload,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_ERROR
    except (TopologyError, ParseError, UnknownEndpoint, NoPathExists, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return DATA_ERROR
    except Exception as err:  # surfaced, never a bare traceback
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
