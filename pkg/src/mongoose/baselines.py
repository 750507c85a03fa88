"""GP-surrogate baselines (EI, EI per unit cost) and random search.

All baselines start from an evaluation at the origin and report trajectories
with the same accounting as the recurrent policy. Kernel hyperparameters are
estimated once, by marginal likelihood on a space-filling warm-start design
whose evaluations are neither added to the surrogate nor charged as movement.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize
from scipy.stats import norm as _normal
from scipy.stats import qmc

from .policy import Trajectory, step_norms
from .prior import KernelSpec

__all__ = [
    "GpModel",
    "GpFitError",
    "BaselineConfig",
    "gp_fit",
    "gp_posterior",
    "expected_improvement",
    "ei_acquisition",
    "eipu_acquisition",
    "movement_cost",
    "maximize_acquisition",
    "fit_hyperparameters",
    "run_baseline_loop",
    "time_baseline",
    "METHODS",
]

METHODS = ("EI", "EIpu", "Random")
JITTER_START, JITTER_MAX = 1e-8, 1e-4


class GpFitError(linalg.LinAlgError):
    pass


@dataclass
class GpModel:
    kernel: KernelSpec
    inputs: np.ndarray
    targets: np.ndarray
    chol: np.ndarray
    alpha_vec: np.ndarray
    noise_variance: float
    jitter: float
    mean_constant: float = 0.0


def gp_fit(kernel: KernelSpec, inputs, targets, noise_variance: float = 0.0,
           mean_constant: float = 0.0, max_points: int = 256) -> GpModel:
    """Exact GP regression by Cholesky, escalating jitter on failure."""
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    n = X.shape[0]
    if n < 1 or y.shape[0] != n:
        raise ValueError(f"need n >= 1 inputs with matching targets, got {X.shape}, {y.shape}")
    if n > max_points:
        raise ValueError(f"{n} points exceeds the configured maximum of {max_points}")
    K = kernel(X, X)
    jitter = JITTER_START
    while True:
        try:
            L = linalg.cholesky(K + (noise_variance + jitter) * np.eye(n), lower=True)
            break
        except linalg.LinAlgError:
            jitter *= 10.0
            if jitter > JITTER_MAX * (1 + 1e-9):
                raise GpFitError(
                    f"Cholesky failed for n={n} even with jitter {JITTER_MAX:g}") from None
    alpha = linalg.cho_solve((L, True), y - mean_constant)
    return GpModel(kernel, X, y, L, alpha, noise_variance, jitter, mean_constant)


def gp_posterior(model: GpModel, x):
    """Posterior mean and (clamped, nonnegative) variance of the latent function.

    ``x`` may be a single point ``(d,)`` or a batch ``(m, d)``.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    Xq = np.atleast_2d(x)
    Ks = model.kernel(model.inputs, Xq)
    mean = model.mean_constant + Ks.T @ model.alpha_vec
    v = linalg.solve_triangular(model.chol, Ks, lower=True)
    var = np.maximum(model.kernel.variance - (v * v).sum(0), 0.0)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def expected_improvement(mean, std, best_y):
    """Closed-form EI for minimisation; ``max(best - mean, 0)`` where ``std ~ 0``."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    gap = best_y - mean
    tiny = std < 1e-12
    safe = np.where(tiny, 1.0, std)
    z = gap / safe
    ei = gap * _normal.cdf(z) + safe * _normal.pdf(z)
    ei = np.where(tiny, np.maximum(gap, 0.0), ei)
    return np.maximum(ei, 0.0)


def ei_acquisition(model: GpModel, x, best_y: float):
    mean, var = gp_posterior(model, x)
    out = expected_improvement(mean, np.sqrt(var), best_y)
    return float(out) if np.ndim(out) == 0 else out


def movement_cost(x_from, x_to, norm: str = "L2"):
    diff = np.asarray(x_to, dtype=float) - np.asarray(x_from, dtype=float)
    if norm == "L2":
        return np.sqrt((diff * diff).sum(-1))
    if norm == "L1":
        return np.abs(diff).sum(-1)
    raise ValueError(f"unknown cost norm {norm!r}")


def eipu_acquisition(model: GpModel, x_current, x, best_y: float, gamma: float = 1.0,
                     norm: str = "L2"):
    """EI divided by ``gamma`` plus the cost of moving from ``x_current`` to ``x``."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return ei_acquisition(model, x, best_y) / (gamma + movement_cost(x_current, x, norm))


_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def maximize_acquisition(acq, d: int, rng: np.random.Generator, restarts: int,
                         iters: int = 100, top: int = 5) -> np.ndarray:
    """Multi-start maximisation of a vectorised acquisition over ``[0, 1]^d``.

    ``restarts`` uniform candidates are scored; the best ``top`` are refined by
    coordinate-wise golden-section search on shrinking windows (window ends
    are probed too), spending ``iters`` golden-section iterations per start. A refinement is kept only
    if it improves the acquisition, so the result never leaves the cube.
    """
    X = rng.uniform(size=(restarts, d))
    vals = acq(X)
    order = np.argsort(-vals, kind="stable")[:top]
    pts, best = X[order].copy(), vals[order].copy()
    sweeps = 2
    per_coord = max(3, iters // (sweeps * d))
    for sweep in range(sweeps):
        radius = 0.5 / (2 ** sweep)
        for j in range(d):
            a = np.maximum(pts[:, j] - radius, 0.0)
            b = np.minimum(pts[:, j] + radius, 1.0)
            for edge in (a, b):  # optima often sit on the cube boundary
                cand = pts.copy()
                cand[:, j] = edge
                fv = acq(cand)
                better = fv > best
                pts[better] = cand[better]
                best[better] = fv[better]
            for _ in range(per_coord):
                c = b - _INVPHI * (b - a)
                e = a + _INVPHI * (b - a)
                pc, pe = pts.copy(), pts.copy()
                pc[:, j], pe[:, j] = c, e
                fc, fe = acq(pc), acq(pe)
                left = fc >= fe
                b = np.where(left, e, b)
                a = np.where(left, a, c)
                for cand, fv, mask in ((pc, fc, left), (pe, fe, ~left)):
                    better = mask & (fv > best)
                    pts[better] = cand[better]
                    best[better] = fv[better]
    k = int(np.argmax(best))
    return np.clip(pts[k], 0.0, 1.0)


def _neg_log_marginal(log_params, X, y, noise):
    d = X.shape[1]
    ls, var = np.exp(log_params[:d]), np.exp(log_params[d])
    K = KernelSpec(ls, var)(X, X) + (noise + 1e-6 * var) * np.eye(len(y))
    try:
        L = linalg.cholesky(K, lower=True)
    except linalg.LinAlgError:
        return 1e10
    a = linalg.cho_solve((L, True), y)
    return 0.5 * y @ a + np.log(np.diag(L)).sum()


def fit_hyperparameters(X, y, noise_variance: float = 0.0
                        ) -> tuple[KernelSpec, float]:
    """Marginal-likelihood lengthscales and variance; returns (kernel, mean).

    A shared-lengthscale grid (variance profiled out) seeds a bounded
    quasi-Newton refinement over per-dimension lengthscales and variance.
    """
    X = np.atleast_2d(X)
    mean = float(np.mean(y))
    yc = np.asarray(y, dtype=float) - mean
    n, d = X.shape
    best = None
    for ell in np.geomspace(0.02, 2.0, 25):
        R = KernelSpec(np.full(d, ell))(X, X) + 1e-6 * np.eye(n)
        try:
            L = linalg.cholesky(R, lower=True)
        except linalg.LinAlgError:
            continue
        q = yc @ linalg.cho_solve((L, True), yc)
        var = max(q / n, 1e-4)
        nll = _neg_log_marginal(np.log(np.r_[np.full(d, ell), var]), X, yc, noise_variance)
        if best is None or nll < best[0]:
            best = (nll, ell, var)
    x0 = np.log(np.r_[np.full(d, best[1]), best[2]])
    bounds = [(np.log(0.01), np.log(5.0))] * d + [(np.log(1e-4), np.log(1e3))]
    res = optimize.minimize(_neg_log_marginal, x0, args=(X, yc, noise_variance),
                            method="L-BFGS-B", bounds=bounds)
    theta = res.x if res.fun <= best[0] else x0
    return KernelSpec(np.exp(theta[:d]), float(np.exp(theta[d]))), mean


@dataclass
class BaselineConfig:
    method: str = "EI"
    gamma: float = 1.0
    warm_start_points: int | None = None  # None -> 10 d
    acq_restarts: int | None = None  # None -> 64 d
    refine_iters: int = 100
    refine_top: int = 5
    cost_norm: str = "L2"
    max_points: int = 256

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown baseline {self.method!r}; choose from {METHODS}")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")


def _observe(obj, x, rng):
    value = obj.value(x)
    return value, value + np.sqrt(obj.noise_variance) * rng.standard_normal()


def run_baseline_loop(objective, T: int, config: BaselineConfig,
                      rng: np.random.Generator) -> Trajectory:
    """Sequential optimisation of ``objective`` for ``T`` steps from the origin."""
    if T < 1:
        raise ValueError("T must be >= 1")
    d = objective.dimension
    points = np.zeros((T + 1, d))
    true_vals = np.empty(T + 1)
    obs = np.empty(T + 1)
    true_vals[0], obs[0] = _observe(objective, points[0], rng)

    if config.method == "Random":
        for t in range(1, T + 1):
            points[t] = rng.uniform(size=d)
            true_vals[t], obs[t] = _observe(objective, points[t], rng)
        return Trajectory(points, true_vals, obs, step_norms(points, config.cost_norm))

    n_warm = config.warm_start_points or 10 * d
    design = qmc.Halton(d, scramble=True, seed=rng).random(n_warm)
    warm_y = np.array([_observe(objective, x, rng)[1] for x in design])
    kernel, mean = fit_hyperparameters(design, warm_y, objective.noise_variance)
    restarts = config.acq_restarts or 64 * d

    for t in range(1, T + 1):
        model = gp_fit(kernel, points[:t], obs[:t], objective.noise_variance, mean,
                       config.max_points)
        best_y = float(obs[:t].min())
        if config.method == "EI":
            def acq(X):
                return ei_acquisition(model, X, best_y)
        else:
            current = points[t - 1]

            def acq(X):
                return eipu_acquisition(model, current, X, best_y, config.gamma,
                                        config.cost_norm)
        points[t] = maximize_acquisition(acq, d, rng, restarts, config.refine_iters,
                                         config.refine_top)
        true_vals[t], obs[t] = _observe(objective, points[t], rng)
    return Trajectory(points, true_vals, obs, step_norms(points, config.cost_norm))


def time_baseline(objective, config: BaselineConfig, rng: np.random.Generator,
                  T: int = 50) -> tuple[float, Trajectory]:
    """Wall-clock seconds for a ``T``-step run (warm start included)."""
    start = time.perf_counter()
    traj = run_baseline_loop(objective, T, config, rng)
    return time.perf_counter() - start, traj
