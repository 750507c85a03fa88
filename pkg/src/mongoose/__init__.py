"""Meta-learned optimisation policies that account for the cost of moving
between query locations, with GP baselines and a benchmark harness."""

from __future__ import annotations

from .baselines import BaselineConfig, GpModel, gp_fit, gp_posterior, run_baseline_loop
from .bench import BenchmarkFn, EvalReport, aggregate_report, make_benchmark, run_eval
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config, parse_config
from .diffcore import backprop_rollout, finite_diff_gradient, forward_loss
from .policy import PolicyParams, Trajectory, init_params, policy_step, rollout
from .prior import (KernelSpec, LengthscalePrior, ObjectiveInstance, fit_inverse_gamma,
                    sample_objective)
from .trainer import curriculum_train

__version__ = "0.1.0"

__all__ = [
    "BaselineConfig", "GpModel", "gp_fit", "gp_posterior", "run_baseline_loop",
    "BenchmarkFn", "EvalReport", "aggregate_report", "make_benchmark", "run_eval",
    "Checkpoint", "load_checkpoint", "save_checkpoint",
    "TrainConfig", "load_config", "parse_config",
    "backprop_rollout", "finite_diff_gradient", "forward_loss",
    "PolicyParams", "Trajectory", "init_params", "policy_step", "rollout",
    "KernelSpec", "LengthscalePrior", "ObjectiveInstance", "fit_inverse_gamma",
    "sample_objective", "curriculum_train",
]
