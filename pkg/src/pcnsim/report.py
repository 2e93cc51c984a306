"""Figure rendering for the CLI report path.

Consumes run metrics and sweep rows (the same data the CSVs carry) and
writes PNG files next to them. The simulation engine itself never plots.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams["figure.figsize"] = (7.0, 4.2)
plt.rcParams["font.size"] = 9
plt.rcParams["axes.grid"] = True
plt.rcParams["grid.alpha"] = 0.3


def plot_run(metrics, outdir) -> list[Path]:
    """Queue/success-ratio trajectories and the final imbalance profile."""
    outdir = Path(outdir)
    written = []

    ts = metrics.series["t"]
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True)
    ax1.plot(ts, metrics.series["total_queue"], lw=1.0, color="tab:blue")
    ax1.set_ylabel("total queued value")
    ax2.plot(ts, metrics.series["success_ratio_cum"], lw=1.2,
             color="tab:green", label="cumulative")
    ax2.plot(ts, metrics.series["success_ratio_window"], lw=0.8, alpha=0.6,
             color="tab:olive", label="windowed")
    ax2.set_ylabel("success ratio")
    ax2.set_xlabel("slot")
    ax2.set_ylim(-0.02, 1.02)
    ax2.legend(loc="lower left")
    fig.suptitle(f"policy={metrics.info['policy']} seed={metrics.info['seed']}")
    path = outdir / "fig_timeseries.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    state = metrics.final_state
    g = state.graph
    z = np.abs(state.imbalance_vector())
    channel_z = [int(z[g.edge_id(u, v)]) for u, v, _c in g.channels]
    fig, ax = plt.subplots()
    ax.bar(range(len(channel_z)), channel_z, color="tab:orange")
    ax.set_xlabel("channel")
    ax.set_ylabel("|imbalance| at horizon")
    path = outdir / "fig_imbalance.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)
    return written


def plot_sweep(results, outdir, x_key: str | None = None) -> list[Path]:
    """Success ratio against the swept parameter, one line per policy."""
    if not results:
        return []
    outdir = Path(outdir)
    keys = sorted({k for overrides, _m in results for k in overrides})
    numeric = [
        k for k in keys
        if all(isinstance(o.get(k), (int, float)) for o, _m in results)
    ]
    if x_key is None:
        x_key = numeric[0] if numeric else None
    if x_key is None:
        return []

    acc: dict[tuple[str, float], list[float]] = {}
    for overrides, metrics in results:
        x = overrides.get(x_key)
        if x is None:
            continue
        acc.setdefault((str(metrics.info["policy"]), float(x)), []).append(
            metrics.success_ratio
        )

    by_policy: dict[str, list[tuple[float, float]]] = {}
    for (policy, x), vals in acc.items():
        by_policy.setdefault(policy, []).append((x, float(np.mean(vals))))

    fig, ax = plt.subplots()
    for policy, pts in sorted(by_policy.items()):
        pts.sort()
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        ax.plot(xs, ys, marker="o", ms=3, label=policy)
    ax.set_xlabel(x_key)
    ax.set_ylabel("success ratio")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    path = outdir / "fig_sweep.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return [path]
