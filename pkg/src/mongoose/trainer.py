"""Curriculum meta-training of the recurrent policy.

Each optimisation step draws a fresh batch of synthetic objectives, rolls the
policy out on all of them, and takes an Adam ascent step on the cost-aware
improvement objective, backpropagated through the whole rollout. Horizons grow
phase by phase; the learning rate drops once the horizon reaches
``lr_switch_horizon``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .checkpoint import Checkpoint
from .config import TrainConfig
from .diffcore import backprop_with_stats, forward_batch
from .losses import composite_loss, improvements, mc_improvement, path_costs, trajectory_cost
from .params import ParamVector
from .policy import NonFiniteError, PolicyParams, init_params, step_norms
from .prior import ObjectiveBatch, fit_inverse_gamma, sample_objective

__all__ = [
    "AdamMoments",
    "TrainMetrics",
    "TrainResult",
    "TrainingAborted",
    "adam_update",
    "clip_by_norm",
    "curriculum_train",
    "sample_batch",
    "step_rng",
    "evaluate_policy",
    "mc_improvement",
    "trajectory_cost",
    "composite_loss",
]

log = logging.getLogger(__name__)

BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


@dataclass
class AdamMoments:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> AdamMoments:
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_update(params: np.ndarray, grad: np.ndarray, step_index: int, lr: float,
                moments: AdamMoments) -> np.ndarray:
    """One bias-corrected Adam descent step; ``step_index`` counts from 1.

    ``moments`` is updated in place. To ascend, pass the negated gradient.
    """
    if params.shape != grad.shape or grad.shape != moments.m.shape:
        raise ValueError("params, grad and moments must share a shape")
    moments.m = BETA1 * moments.m + (1.0 - BETA1) * grad
    moments.v = BETA2 * moments.v + (1.0 - BETA2) * grad * grad
    moments.t = step_index
    m_hat = moments.m / (1.0 - BETA1**step_index)
    v_hat = moments.v / (1.0 - BETA2**step_index)
    return params - lr * m_hat / (np.sqrt(v_hat) + EPS)


def clip_by_norm(grad: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    norm = float(np.sqrt(grad @ grad))
    if max_norm > 0 and norm > max_norm:
        return grad * (max_norm / norm), norm
    return grad, norm


@dataclass
class TrainMetrics:
    step: int
    horizon: int
    loss: float
    improvement: float
    cost: float
    grad_norm: float
    lr: float
    wall_time: float

    FIELDS = ("step", "horizon", "loss", "improvement", "cost", "grad_norm", "lr", "wall_time")

    def row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


@dataclass
class TrainResult:
    params: PolicyParams
    checkpoints: list[Checkpoint] = field(default_factory=list)
    metrics: list[TrainMetrics] = field(default_factory=list)


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, last_good: Checkpoint):
        super().__init__(message)
        self.last_good = last_good


def step_rng(seed: int, step: int) -> np.random.Generator:
    """Independent stream for training step ``step`` of run ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(step,)))


def sample_batch(config: TrainConfig, rng: np.random.Generator, size: int | None = None,
                 prior=None) -> list:
    prior = prior or fit_inverse_gamma(config.lengthscale_lo, config.lengthscale_hi,
                                       config.lengthscale_mass)
    return [sample_objective(rng, config.dimension, prior, config.num_features,
                             config.include_bowl, config.noise_variance)
            for _ in range(size or config.batch_size)]


def evaluate_policy(params, instances, T: int, norm: str = "L2", workers: int = 1
                    ) -> dict[str, np.ndarray]:
    """Noiseless batched rollouts; per-instance improvement and costs.

    ``cost`` is the full evaluation cost including the hop from the origin.
    """
    cfg = TrainConfig(dimension=instances[0].dimension, horizon_schedule=(T,), cost_norm=norm)
    _, _, caches = forward_batch(params, ObjectiveBatch(instances), cfg, T, None, workers)
    X = np.concatenate([c.X for c in caches])
    Y = np.concatenate([c.Y_true for c in caches])
    return {
        "improvement": improvements(Y),
        "train_cost": path_costs(X, norm),
        "cost": step_norms(X, norm).sum(axis=1),
        "best": Y[:, 1:].min(axis=1),
        "X": X,
        "Y": Y,
    }


def _checkpoint(params: np.ndarray, layout, config, step, moments) -> Checkpoint:
    return Checkpoint(
        params=PolicyParams.from_vector(ParamVector(params.copy(), layout)),
        config=config,
        step=step,
        adam_t=moments.t,
        adam_m=ParamVector(moments.m.copy(), layout),
        adam_v=ParamVector(moments.v.copy(), layout),
    )


def curriculum_train(config: TrainConfig, workers: int = 1, resume: Checkpoint | None = None,
                     on_metrics: Callable[[TrainMetrics], None] | None = None,
                     on_checkpoint: Callable[[Checkpoint, int], None] | None = None
                     ) -> TrainResult:
    """Run the full curriculum described by ``config``.

    One checkpoint is produced at the end of every phase. With ``resume`` the
    run continues after ``resume.step`` with the saved optimiser state; the
    result is identical to an uninterrupted run.
    """
    prior = fit_inverse_gamma(config.lengthscale_lo, config.lengthscale_hi,
                              config.lengthscale_mass)
    if resume is None:
        init = init_params(config.dimension, config.hidden_size,
                           np.random.default_rng(np.random.SeedSequence(config.seed,
                                                                        spawn_key=(2**32,))))
        vec = init.to_vector()
        moments = AdamMoments.zeros(len(vec))
        start = 0
    else:
        if (resume.dimension, resume.hidden_size) != (config.dimension, config.hidden_size):
            raise ValueError("resume checkpoint does not match config dimension/hidden size")
        vec = resume.params.to_vector()
        n = len(vec)
        moments = AdamMoments(
            resume.adam_m.values.copy() if resume.adam_m is not None else np.zeros(n),
            resume.adam_v.values.copy() if resume.adam_v is not None else np.zeros(n),
            resume.adam_t,
        )
        start = resume.step
    layout = vec.layout
    theta = vec.values.copy()
    result = TrainResult(PolicyParams.from_vector(ParamVector(theta.copy(), layout)))

    step = 0
    for phase, (horizon, n_steps) in enumerate(zip(config.horizon_schedule,
                                                   config.phase_steps())):
        lr = config.learning_rate(horizon)
        phase_end = step + n_steps
        if phase_end <= start:
            step = phase_end
            continue
        step = max(step, start)
        while step < phase_end:
            t0 = time.perf_counter()
            rng = step_rng(config.seed, step)
            batch = sample_batch(config, rng, prior=prior)
            noise = np.sqrt(config.noise_variance) * rng.standard_normal(
                (config.batch_size, horizon + 1))
            try:
                grad, stats = backprop_with_stats(ParamVector(theta, layout), batch, config,
                                                  horizon, noise, workers)
            except NonFiniteError as exc:
                raise TrainingAborted(f"step {step}: {exc}",
                                      _checkpoint(theta, layout, config, step, moments)) from exc
            ascent, gnorm = clip_by_norm(grad.values, config.clip_norm)
            theta = adam_update(theta, -ascent, moments.t + 1, lr, moments)
            step += 1
            m = TrainMetrics(step, horizon, stats.loss, stats.improvement, stats.cost, gnorm,
                             lr, time.perf_counter() - t0)
            result.metrics.append(m)
            if on_metrics is not None:
                on_metrics(m)
            if step % 100 == 0:
                log.info("step %d h=%d loss=%.4f imp=%.4f cost=%.3f |g|=%.3g", step, horizon,
                         m.loss, m.improvement, m.cost, gnorm)
        ckpt = _checkpoint(theta, layout, config, step, moments)
        result.checkpoints.append(ckpt)
        if on_checkpoint is not None:
            on_checkpoint(ckpt, phase)
    result.params = PolicyParams.from_vector(ParamVector(theta.copy(), layout))
    return result
