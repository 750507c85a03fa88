"""SVG figures: objective surfaces, rollout paths and regret-vs-cost curves.

matplotlib is imported lazily so the numerical modules never pay for it.
"""

from __future__ import annotations

import numpy as np

__all__ = ["grid_values", "plot_surface", "plot_trajectory", "plot_regret_vs_cost"]


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "mongoose"  # stable element ids
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    fig.clf()
    _pyplot().close(fig)


def grid_values(value, d: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate ``value(x)`` on an ``n``-point grid per axis (d = 1 or 2)."""
    axis = np.linspace(0.0, 1.0, n)
    if d == 1:
        return axis, np.array([value(np.array([a])) for a in axis])
    if d == 2:
        vals = np.array([[value(np.array([a, b])) for a in axis] for b in axis])
        return axis, vals
    raise ValueError("grids are only defined for d = 1 or 2")


def plot_surface(axis, vals, path, title: str = "") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    if vals.ndim == 1:
        ax.plot(axis, vals)
        ax.set_xlabel("x")
        ax.set_ylabel("f(x)")
    else:
        im = ax.imshow(vals, origin="lower", extent=(0, 1, 0, 1), cmap="viridis")
        fig.colorbar(im, ax=ax)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
    ax.set_title(title)
    _save(fig, path)


def plot_trajectory(traj, path, background=None, title: str = "") -> None:
    """Query path over an optional ``(axis, vals)`` background (first two coords)."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    pts = traj.points
    if pts.shape[1] == 1:
        if background is not None:
            ax.plot(*background, color="0.6")
        ax.plot(pts[:, 0], traj.true_values, "o-", ms=3)
        ax.set_xlabel("x")
    else:
        if background is not None:
            axis, vals = background
            ax.imshow(vals, origin="lower", extent=(0, 1, 0, 1), cmap="viridis")
        ax.plot(pts[:, 0], pts[:, 1], "o-", color="tab:red", ms=3)
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
    ax.set_title(title)
    _save(fig, path)


def plot_regret_vs_cost(summary, path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in sorted(summary.actors):
        s = summary.actors[name]
        line, = ax.plot(s.mean_cost, s.mean_regret, label=name)
        ax.fill_between(s.mean_cost, s.regret_p5, s.regret_p95, alpha=0.2,
                        color=line.get_color())
    ax.set_xlabel("cumulative movement cost")
    ax.set_ylabel("simple regret")
    ax.legend()
    _save(fig, path)
