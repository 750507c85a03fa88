"""Training objectives: improvement, movement cost and their combination.

Array conventions: ``Y`` is ``(B, T + 1)`` observed values and ``X`` is
``(B, T + 1, d)`` query points, with index 0 the fixed origin evaluation. The
improvement baseline is the first *chosen* point ``x_1`` and the training cost
sums hops ``x_1 -> x_2`` up to ``x_{T-1} -> x_T``.

All objectives are maximised.
"""

from __future__ import annotations

import numpy as np

from .policy import Trajectory, step_norms

__all__ = [
    "mc_improvement",
    "trajectory_cost",
    "composite_loss",
    "improvements",
    "path_costs",
    "combine",
    "loss_and_adjoints",
]


def improvements(Y: np.ndarray) -> np.ndarray:
    """Per-trajectory ``y_1 - min_{t>=1} y_t``."""
    return Y[:, 1] - Y[:, 1:].min(axis=1)


def path_costs(X: np.ndarray, norm: str) -> np.ndarray:
    """Per-trajectory sum of hop lengths from ``x_1`` onwards."""
    return step_norms(X[:, 1:], norm).sum(axis=1)


def combine(improvement: float, cost: float, alpha: float, form: str) -> float:
    if form == "divide":
        return improvement / (1.0 + alpha * cost)
    if form == "add":
        return improvement - alpha * cost
    raise ValueError(f"unknown loss form {form!r}")


def mc_improvement(trajectories: list[Trajectory]) -> float:
    if not trajectories:
        raise ValueError("need at least one trajectory")
    horizons = {tr.horizon for tr in trajectories}
    if len(horizons) != 1:
        raise ValueError(f"trajectories have mixed horizons {sorted(horizons)}")
    Y = np.stack([tr.observed_values for tr in trajectories])
    return float(improvements(Y).mean())


def trajectory_cost(traj: Trajectory, norm: str = "L2") -> float:
    return float(step_norms(traj.points[1:], norm).sum())


def composite_loss(trajectories: list[Trajectory], config) -> float:
    imp = mc_improvement(trajectories)
    cost = float(np.mean([trajectory_cost(tr, config.cost_norm) for tr in trajectories]))
    return combine(imp, cost, config.alpha, config.loss_form)


def loss_and_adjoints(Y: np.ndarray, X: np.ndarray, alpha: float, form: str,
                      norm: str, myopic_detach: bool = False):
    """Batch objective and its partial derivatives w.r.t. ``Y`` and ``X``.

    With ``myopic_detach`` the improvement is differentiated as a sum of
    one-step gains against a stop-gradient running best, so each value only
    receives gradient through its own gain term. The returned loss value is
    the same in both modes.

    Returns:
        ``(loss, improvement, cost, dY, dX)``.
    """
    B = Y.shape[0]
    imp_b = improvements(Y)
    cost_b = path_costs(X, norm)
    imp = imp_b.mean()
    cost = cost_b.mean()
    loss = combine(imp, cost, alpha, form)

    if form == "divide":
        denom = 1.0 + alpha * cost
        d_imp = 1.0 / denom
        d_cost = -alpha * imp / (denom * denom)
    else:
        d_imp, d_cost = 1.0, -alpha

    dY = np.zeros_like(Y)
    rows = np.arange(B)
    if myopic_detach:
        # sum_{t>=2} max(stopgrad(min_{t'<t} y_t') - y_t, 0)
        best_before = np.minimum.accumulate(Y[:, 1:-1], axis=1)
        gains = best_before > Y[:, 2:]
        dY[:, 2:] = np.where(gains, -d_imp / B, 0.0)
    else:
        dY[rows, 1] += d_imp / B
        # argmin picks the earliest attaining index on ties
        dY[rows, 1 + np.argmin(Y[:, 1:], axis=1)] -= d_imp / B

    dX = np.zeros_like(X)
    diffs = np.diff(X[:, 1:], axis=1)
    if norm == "L2":
        lengths = np.sqrt((diffs * diffs).sum(-1, keepdims=True))
        unit = np.divide(diffs, lengths, out=np.zeros_like(diffs), where=lengths > 0)
    else:
        unit = np.sign(diffs)
    g = unit * (d_cost / B)
    dX[:, 2:] += g
    dX[:, 1:-1] -= g
    return loss, imp, cost, dY, dX
