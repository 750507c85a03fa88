"""Reverse-mode differentiation of rollout objectives.

The architecture is fixed (LSTM cell, sigmoid decoder, Fourier-feature
objective, loss reductions), so the adjoints are written out by hand instead
of going through a general tape. The batch is processed in fixed-size chunks;
chunk results are reduced in chunk order, which makes the output independent
of how many worker threads evaluate the chunks.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .losses import loss_and_adjoints
from .params import ParamVector
from .policy import NonFiniteError, PolicyParams, activate_gates, gate_scales, sigmoid
from .prior import ObjectiveBatch, ObjectiveInstance

__all__ = [
    "GradientReport",
    "RolloutStats",
    "CHUNK_SIZE",
    "forward_batch",
    "forward_loss",
    "backprop_rollout",
    "backprop_with_stats",
    "finite_diff_gradient",
]

CHUNK_SIZE = 32


@dataclass
class GradientReport:
    max_rel_err: float
    worst_coordinate: str | None
    num_checked: int
    coords: np.ndarray
    numeric: np.ndarray
    analytic: np.ndarray | None
    rel_errors: np.ndarray | None

    def table(self, names: Sequence[str] | None = None) -> str:
        head = f"{'coordinate':<28}{'analytic':>16}{'numeric':>16}{'rel_err':>12}"
        rows = [head, "-" * len(head)]
        for k, c in enumerate(self.coords):
            name = names[k] if names is not None else str(int(c))
            a = self.analytic[k] if self.analytic is not None else float("nan")
            r = self.rel_errors[k] if self.rel_errors is not None else float("nan")
            rows.append(f"{name:<28}{a:>16.8e}{self.numeric[k]:>16.8e}{r:>12.2e}")
        rows.append(f"max_rel_err = {self.max_rel_err:.3e} at {self.worst_coordinate} "
                    f"({self.num_checked} coordinates checked)")
        return "\n".join(rows)


@dataclass
class RolloutStats:
    loss: float
    improvement: float
    cost: float
    X: np.ndarray
    Y_obs: np.ndarray
    Y_true: np.ndarray


@dataclass
class _Cache:
    X: np.ndarray  # (b, T+1, d)
    Y_obs: np.ndarray  # (b, T+1)
    Y_true: np.ndarray
    grad_f: np.ndarray  # (b, T+1, d)
    inputs: np.ndarray  # (T, b, d+1+H) cell inputs [x_t, y_t, h_t]
    gates: np.ndarray  # (T, b, 4H) activated gates
    C: np.ndarray  # (T+1, b, H) cell states, C[0] = 0
    tanhC: np.ndarray  # (T, b, H)
    Hs: np.ndarray  # (T, b, H) hidden states after each step


def _as_batch(batch) -> ObjectiveBatch:
    if isinstance(batch, ObjectiveBatch):
        return batch
    if isinstance(batch, ObjectiveInstance):
        return ObjectiveBatch([batch])
    return ObjectiveBatch(list(batch))


def _check(arr: np.ndarray, name: str, t: int):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite {name} at timestep {t}")


def _forward_chunk(p: PolicyParams, batch: ObjectiveBatch, T: int,
                   noise: np.ndarray) -> _Cache:
    b, d, H = len(batch), batch.dimension, p.hidden_size
    W = np.vstack([p.input_weights, p.recurrent_weights])
    scale = gate_scales(H)
    X = np.zeros((b, T + 1, d))
    Y_obs = np.empty((b, T + 1))
    Y_true = np.empty((b, T + 1))
    grad_f = np.empty((b, T + 1, d))
    inputs = np.zeros((T, b, d + 1 + H))
    gates = np.empty((T, b, 4 * H))
    C = np.zeros((T + 1, b, H))
    tanhC = np.empty((T, b, H))
    Hs = np.empty((T, b, H))

    val, grad = batch.value_and_grad(X[:, 0])
    Y_true[:, 0], grad_f[:, 0] = val, grad
    Y_obs[:, 0] = val + noise[:, 0]
    for t in range(T):
        inp = inputs[t]
        inp[:, :d] = X[:, t]
        inp[:, d] = Y_obs[:, t]
        if t > 0:
            inp[:, d + 1:] = Hs[t - 1]
        z = inp @ W + p.gate_biases
        _check(z, "gate pre-activation", t)
        g = activate_gates(z, scale, out=gates[t])
        C[t + 1] = g[:, H:2 * H] * C[t] + g[:, :H] * g[:, 2 * H:3 * H]
        _check(C[t + 1], "cell state", t)
        np.tanh(C[t + 1], out=tanhC[t])
        Hs[t] = g[:, 3 * H:] * tanhC[t]
        x = sigmoid(Hs[t] @ p.decoder_weights + p.decoder_bias)
        X[:, t + 1] = x
        val, grad = batch.value_and_grad(x)
        _check(val, "objective value", t + 1)
        _check(grad, "objective gradient", t + 1)
        Y_true[:, t + 1], grad_f[:, t + 1] = val, grad
        Y_obs[:, t + 1] = val + noise[:, t + 1]
    return _Cache(X, Y_obs, Y_true, grad_f, inputs, gates, C, tanhC, Hs)


def _backward_chunk(p: PolicyParams, cache: _Cache, dY: np.ndarray,
                    dX: np.ndarray) -> dict[str, np.ndarray]:
    b, T1, d = cache.X.shape
    T, H = T1 - 1, p.hidden_size
    W = np.vstack([p.input_weights, p.recurrent_weights])
    DZ = np.empty((T, b, 4 * H))
    DA = np.empty((T, b, d))

    dh_next = np.zeros((b, H))
    dc_next = np.zeros((b, H))
    du_next = np.zeros((b, d + 1))
    for t in range(T, 0, -1):
        s = t - 1
        # x_t feeds the loss, the objective (-> y_t) and the next cell input
        ay = dY[:, t] + du_next[:, d]
        gx = dX[:, t] + du_next[:, :d] + ay[:, None] * cache.grad_f[:, t]
        x = cache.X[:, t]
        da = DA[s]
        np.multiply(gx, x * (1.0 - x), out=da)
        dh = dh_next + da @ p.decoder_weights.T

        g = cache.gates[s]
        i, f = g[:, :H], g[:, H:2 * H]
        gg, o = g[:, 2 * H:3 * H], g[:, 3 * H:]
        tc = cache.tanhC[s]
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = DZ[s]
        dz[:, :H] = dc * gg * i * (1.0 - i)
        dz[:, H:2 * H] = dc * cache.C[s] * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dc * i * (1.0 - gg * gg)
        dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
        _check(dz, "gate adjoint", s)
        dinp = dz @ W.T
        du_next = dinp[:, :d + 1]
        dh_next = dinp[:, d + 1:]
        dc_next = dc * f

    inputs = cache.inputs.reshape(T * b, -1)
    DZ = DZ.reshape(T * b, 4 * H)
    DA = DA.reshape(T * b, d)
    dW = inputs.T @ DZ
    return {"input_weights": dW[:d + 1], "recurrent_weights": dW[d + 1:],
            "gate_biases": DZ.sum(0),
            "decoder_weights": cache.Hs.reshape(T * b, H).T @ DA,
            "decoder_bias": DA.sum(0)}


def _chunks(n: int) -> list[slice]:
    return [slice(s, min(s + CHUNK_SIZE, n)) for s in range(0, n, CHUNK_SIZE)]


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _prepare(params, batch, config, horizon, noise):
    p = params if isinstance(params, PolicyParams) else PolicyParams.from_vector(params)
    batch = _as_batch(batch)
    if batch.dimension != p.dimension:
        raise ValueError(f"policy is for d={p.dimension} but batch has d={batch.dimension}")
    T = config.target_horizon if horizon is None else int(horizon)
    if T < 1:
        raise ValueError("horizon must be >= 1")
    if noise is None:
        noise = np.zeros((len(batch), T + 1))
    elif noise.shape != (len(batch), T + 1):
        raise ValueError(f"noise must have shape {(len(batch), T + 1)}, got {noise.shape}")
    return p, batch, T, noise


def forward_batch(params, batch, config, horizon=None, noise=None, workers=1):
    """Forward rollouts of the whole batch, returning the chunk caches."""
    p, batch, T, noise = _prepare(params, batch, config, horizon, noise)
    slices = _chunks(len(batch))
    caches = _map(lambda sl: _forward_chunk(p, batch.subset(sl), T, noise[sl]), slices,
                  workers)
    return p, slices, caches


def _loss_from_caches(caches, config):
    X = np.concatenate([c.X for c in caches])
    Y = np.concatenate([c.Y_obs for c in caches])
    out = loss_and_adjoints(Y, X, config.alpha, config.loss_form, config.cost_norm,
                            config.myopic_detach)
    return X, Y, out


def forward_loss(params, batch, config, horizon=None, noise=None, workers=1) -> float:
    """The configured objective computed without the backward pass."""
    _, _, caches = forward_batch(params, batch, config, horizon, noise, workers)
    _, _, (loss, *_rest) = _loss_from_caches(caches, config)
    return float(loss)


def backprop_with_stats(params, batch, config, horizon=None, noise=None, workers=1
                        ) -> tuple[ParamVector, RolloutStats]:
    p, slices, caches = forward_batch(params, batch, config, horizon, noise, workers)
    X, Y, (loss, imp, cost, dY, dX) = _loss_from_caches(caches, config)
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {loss}")
    parts = _map(lambda k: _backward_chunk(p, caches[k], dY[slices[k]], dX[slices[k]]),
                 list(range(len(slices))), workers)
    total = parts[0]
    for part in parts[1:]:
        for name in total:
            total[name] = total[name] + part[name]
    grad = PolicyParams(**total).to_vector()
    Y_true = np.concatenate([c.Y_true for c in caches])
    return grad, RolloutStats(float(loss), float(imp), float(cost), X, Y, Y_true)


def backprop_rollout(params, batch, config, horizon=None, noise=None, workers=1
                     ) -> tuple[float, ParamVector]:
    """Loss and its exact gradient w.r.t. all policy parameters.

    Gradients flow through every timestep, including the effect of early
    queries on later observations, unless ``config.myopic_detach`` is set.
    """
    grad, stats = backprop_with_stats(params, batch, config, horizon, noise, workers)
    return stats.loss, grad


def finite_diff_gradient(loss_fn: Callable[[ParamVector], float], params: ParamVector,
                         coords, h: float = 1e-5,
                         analytic: ParamVector | np.ndarray | None = None
                         ) -> GradientReport:
    """Central differences at ``coords``, compared against ``analytic`` if given.

    The relative error uses ``max(|analytic|, |numeric|, 1e-8)`` as denominator.
    """
    coords = np.asarray(coords, dtype=int)
    if h <= 0 or coords.size == 0:
        raise ValueError("need h > 0 and at least one coordinate")
    numeric = np.empty(coords.size)
    for k, c in enumerate(coords):
        up = params.values.copy()
        up[c] += h
        dn = params.values.copy()
        dn[c] -= h
        numeric[k] = (loss_fn(params.with_values(up)) - loss_fn(params.with_values(dn))) / (2 * h)
    if analytic is None:
        return GradientReport(float("nan"), None, coords.size, coords, numeric, None, None)
    a = analytic.values if isinstance(analytic, ParamVector) else np.asarray(analytic)
    a = a[coords]
    rel = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
    worst = int(np.argmax(rel))
    return GradientReport(float(rel[worst]), params.coordinate_name(int(coords[worst])),
                          coords.size, coords, numeric, a, rel)
