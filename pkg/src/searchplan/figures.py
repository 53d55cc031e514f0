"""Matplotlib rendering of maps, plans, traces, and benchmark tables."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Rectangle

from .colony import AntSolution
from .harness import BenchRow
from .maps import OccupancyGrid, PreferredArea, ProbabilityGrid, SearchGraph, SegmentedMap

AGENT_COLORS = ("tab:red", "tab:green", "tab:blue", "tab:orange", "tab:purple")


def _extent(resolution: float, shape) -> list[float]:
    h, w = shape
    return [0, w * resolution, 0, h * resolution]


def plot_plan(
    occ: OccupancyGrid,
    prior: ProbabilityGrid,
    graphs: Sequence[SearchGraph],
    solution: AntSolution,
    path: str | Path,
    areas: Sequence[PreferredArea] = (),
    title: str | None = None,
) -> Path:
    """Map raster with the prior heatmap, agent paths, and preferred areas."""
    fig, ax = plt.subplots(figsize=(7, 7))
    ax.imshow(
        occ.occupied,
        cmap="gray_r",
        origin="lower",
        extent=_extent(occ.resolution, occ.occupied.shape),
        alpha=0.9,
    )
    heat = np.ma.masked_where(prior.mass <= 0, prior.mass)
    ax.imshow(
        heat,
        cmap="Blues",
        origin="lower",
        extent=_extent(prior.resolution, prior.mass.shape),
        alpha=0.6,
    )
    for m, nodes in enumerate(solution.paths):
        pts = graphs[m].positions[list(nodes)]
        color = AGENT_COLORS[m % len(AGENT_COLORS)]
        ax.plot(pts[:, 0], pts[:, 1], "-o", color=color, markersize=3, linewidth=1.6,
                label=f"agent {m} ({solution.path_distances[m]:.0f} m)")
        ax.plot(pts[0, 0], pts[0, 1], "s", color=color, markersize=9)
    for area in areas:
        color = AGENT_COLORS[area.owner % len(AGENT_COLORS)]
        ax.add_patch(
            Rectangle(
                (area.x_min, area.y_min),
                area.x_max - area.x_min,
                area.y_max - area.y_min,
                fill=False,
                edgecolor=color,
                linestyle="--",
                linewidth=1.5,
            )
        )
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(
        title
        or f"expected time {solution.et:.1f}, residual {solution.residual:.3f}"
    )
    ax.legend(loc="upper right", fontsize=8)
    ax.set_aspect("equal")
    out = Path(path)
    fig.savefig(out, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return out


def plot_convergence(trace: Sequence[float], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(len(trace)), trace, color="tab:blue")
    ax.set_xlabel("iteration")
    ax.set_ylabel("best cost")
    ax.set_title("best-so-far cost")
    ax.grid(alpha=0.3)
    out = Path(path)
    fig.savefig(out, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return out


def plot_benchmark(rows: Sequence[BenchRow], out_prefix: str | Path) -> list[Path]:
    """One grouped bar chart per metric (ET / CT / PD) with sd error bars,
    written as <prefix>_et.png etc."""
    out_prefix = Path(out_prefix)
    labels = [
        f"{r.scenario}\n{r.heuristic}{'+S' if r.subpriors else ''}" for r in rows
    ]
    made = []
    for metric, mean_of, sd_of in (
        ("et", lambda r: r.et_mean, lambda r: r.et_sd),
        ("ct", lambda r: r.ct_mean, lambda r: r.ct_sd),
        ("pd", lambda r: r.pd_mean, lambda r: r.pd_sd),
    ):
        fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(rows)), 4))
        xs = np.arange(len(rows))
        ax.bar(
            xs,
            [mean_of(r) for r in rows],
            yerr=[sd_of(r) for r in rows],
            capsize=4,
            color=[AGENT_COLORS[i % len(AGENT_COLORS)] for i in range(len(rows))],
            alpha=0.8,
        )
        ax.set_xticks(xs)
        ax.set_xticklabels(labels, fontsize=8)
        ax.set_ylabel(metric.upper())
        ax.grid(axis="y", alpha=0.3)
        out = out_prefix.parent / f"{out_prefix.name}_{metric}.png"
        fig.savefig(out, dpi=130, bbox_inches="tight")
        plt.close(fig)
        made.append(out)
    return made


def plot_run(
    occ: OccupancyGrid,
    prior: ProbabilityGrid,
    graphs: Sequence[SearchGraph],
    plans: Sequence[Sequence[int]],
    trajectory: Sequence[Sequence[tuple[float, float]]],
    target: tuple[float, float],
    path: str | Path,
) -> Path:
    """Executed trajectories over the planned polylines plus the target."""
    fig, ax = plt.subplots(figsize=(7, 7))
    ax.imshow(
        occ.occupied,
        cmap="gray_r",
        origin="lower",
        extent=_extent(occ.resolution, occ.occupied.shape),
    )
    heat = np.ma.masked_where(prior.mass <= 0, prior.mass)
    ax.imshow(
        heat, cmap="Blues", origin="lower",
        extent=_extent(prior.resolution, prior.mass.shape), alpha=0.45,
    )
    for m, nodes in enumerate(plans):
        pts = graphs[m].positions[list(nodes)]
        color = AGENT_COLORS[m % len(AGENT_COLORS)]
        ax.plot(pts[:, 0], pts[:, 1], "--", color=color, alpha=0.6, linewidth=1.2)
        traj = np.asarray(trajectory[m])
        if len(traj):
            ax.plot(traj[:, 0], traj[:, 1], "-", color=color, linewidth=2.0, label=f"agent {m}")
    ax.plot(*target, "k*", markersize=14, label="target")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    out = Path(path)
    fig.savefig(out, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return out
