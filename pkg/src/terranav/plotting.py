"""Matplotlib figures written next to run artifacts (Agg backend, PNG)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .mapping import LAYERS, MapStack  # noqa: E402


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def trajectory(scenario, trace, path, cycles=None) -> None:
    """Robot trace over the true slope of the scenario terrain."""
    x0, x1, y0, y1 = scenario.bounds()
    tr = np.array([row[1:3] for row in trace], dtype=float).reshape(-1, 2)
    if len(tr):
        x0, x1 = min(x0, tr[:, 0].min() - 1.0), max(x1, tr[:, 0].max() + 1.0)
        y0, y1 = min(y0, tr[:, 1].min() - 1.0), max(y1, tr[:, 1].max() + 1.0)
    X, Y = np.meshgrid(np.linspace(x0, x1, 240), np.linspace(y0, y1, 240))
    S = scenario.field.slope(X, Y)
    fig, ax = plt.subplots(figsize=(7, 6))
    im = ax.pcolormesh(X, Y, S, shading="auto", cmap="viridis")
    fig.colorbar(im, ax=ax, label="true slope [rad]")
    if len(tr):
        ax.plot(tr[:, 0], tr[:, 1], "r-", lw=1.5, label="trace")
    for c in cycles or []:
        ax.plot(*c, "wo", ms=4)
    ax.plot(*scenario.start[:2], "ws", ms=8, label="start")
    ax.plot(*scenario.goal, "w*", ms=12, label="goal")
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(scenario.name)
    ax.legend(loc="upper right", fontsize=8)
    _save(fig, path)


def attitude(trace, path, max_roll: float, max_pitch: float) -> None:
    """Roll, pitch and commanded speed against time."""
    tr = np.array([row[:-1] for row in trace], dtype=float).reshape(-1, 9)
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    a1.plot(tr[:, 0], tr[:, 4], label="roll")
    a1.plot(tr[:, 0], tr[:, 5], label="pitch")
    for lim, style in ((max_roll, "C0--"), (max_pitch, "C1--")):
        a1.axhline(lim, color=style[:2], ls="--", lw=0.8)
        a1.axhline(-lim, color=style[:2], ls="--", lw=0.8)
    a1.set_ylabel("angle [rad]")
    a1.legend(fontsize=8)
    a2.plot(tr[:, 0], tr[:, 7], "k-")
    a2.set_ylabel("v [m/s]")
    a2.set_xlabel("t [s]")
    _save(fig, path)


def layers(maps: MapStack, path, tree=None, waypoints=None) -> None:
    """Six-panel view of one cycle's map stack, robot frame."""
    spec = maps.elevation.spec
    ext = (-spec.half_extent_x, spec.half_extent_x, -spec.half_extent_y, spec.half_extent_y)
    fig, axes = plt.subplots(2, 3, figsize=(13, 8))
    for ax, name in zip(axes.ravel(), LAYERS):
        g = maps.layers()[name]
        kw = {"vmin": 0.0, "vmax": 1.0} if name == "traversability" else {}
        im = ax.imshow(g.values, origin="lower", extent=ext, **kw)
        fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_title(name)
    if tree is not None:
        ax = axes.ravel()[-1]
        for k in range(1, tree.n):
            p = tree.parent[k]
            ax.plot([tree.x[p], tree.x[k]], [tree.y[p], tree.y[k]], "k-", lw=0.3)
    if waypoints is not None and len(waypoints):
        w = np.asarray(waypoints, dtype=float)
        axes.ravel()[-1].plot(w[:, 0], w[:, 1], "r.-", lw=1.2)
    _save(fig, path)


def batch_summary(rows: list[dict], path) -> None:
    """Per-trial bars of the four headline metrics, failures hatched."""
    names = ("v_avg", "path_length", "max_roll", "max_pitch")
    fig, axes = plt.subplots(1, 4, figsize=(14, 3.5))
    idx = np.arange(len(rows))
    ok = np.array([bool(r["success"]) for r in rows])
    for ax, name in zip(axes, names):
        vals = np.array([float(r[name]) for r in rows])
        bars = ax.bar(idx, vals, color=np.where(ok, "C0", "C3"))
        for b, good in zip(bars, ok):
            if not good:
                b.set_hatch("//")
        ax.set_title(name)
        ax.set_xlabel("trial")
    _save(fig, path)
