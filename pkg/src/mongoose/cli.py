"""Command-line entry point: ``mongoose <subcommand> [options]``.

Subcommands: train, bench, rollout, sample-prior, grad-check. Every run is
seeded by ``--seed``, falling back to the ``MONGOOSE_SEED`` environment
variable and then to 0. All artifacts go under ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .baselines import BaselineConfig
from .bench import (REGISTRY, BaselineActor, PolicyActor, aggregate_report, make_benchmark,
                    run_eval, write_report_csv, write_summary_csv, write_tables_csv)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, TrainConfig, format_config, load_config
from .diffcore import backprop_rollout, finite_diff_gradient, forward_loss
from .policy import NonFiniteError, init_params, rollout
from .prior import LengthscalePrior, PriorFitError, fit_inverse_gamma, sample_objective
from .trainer import TrainingAborted, TrainMetrics, curriculum_train, sample_batch

log = logging.getLogger("mongoose")

__all__ = ["build_parser", "run_command", "main", "resolve_seed"]


def resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("MONGOOSE_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"MONGOOSE_SEED must be an integer, got {env!r}") from None


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _nonneg_float(text):
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text}")
    return value


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- train

def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None or os.environ.get("MONGOOSE_SEED"):
        cfg = cfg.replace(seed=resolve_seed(args.seed))
    out = _out_dir(args.out)
    (out / "config.cfg").write_text(format_config(cfg))
    resume = load_checkpoint(args.resume) if args.resume else None

    metrics_path = out / "metrics.csv"
    append = resume is not None and metrics_path.exists()
    fh = open(metrics_path, "a" if append else "w", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    if not append:
        writer.writerow(TrainMetrics.FIELDS)

    def on_metrics(m):
        if args.no_timing:
            m.wall_time = 0.0
        writer.writerow([repr(v) if isinstance(v, float) else v for v in m.row()])

    def on_checkpoint(ckpt, phase):
        path = save_checkpoint(ckpt, out / f"phase{phase}.ckpt")
        log.info("phase %d done at step %d -> %s", phase, ckpt.step, path)

    try:
        result = curriculum_train(cfg, workers=args.workers, resume=resume,
                                  on_metrics=on_metrics, on_checkpoint=on_checkpoint)
    except TrainingAborted as exc:
        save_checkpoint(exc.last_good, out / "aborted.ckpt")
        raise
    finally:
        fh.close()
    final = result.checkpoints[-1] if result.checkpoints else None
    if final is not None:
        save_checkpoint(final, out / "final.ckpt")
        print(f"wrote {out / 'final.ckpt'} (step {final.step})")
    return 0


# ---------------------------------------------------------------- bench

def _make_actor(choice: str, gamma: float, dim: int):
    if choice.startswith("checkpoint:"):
        path = choice.split(":", 1)[1]
        ckpt = load_checkpoint(path)
        if ckpt.dimension != dim:
            raise ValueError(f"checkpoint {path} is for d={ckpt.dimension}, "
                             f"benchmark has d={dim}")
        return PolicyActor(ckpt.params, name="policy", cost_norm=ckpt.config.cost_norm)
    methods = {"ei": "EI", "eipu": "EIpu", "random": "Random"}
    if choice.lower() not in methods:
        raise ValueError(f"unknown actor {choice!r}; use checkpoint:<path>, ei, eipu or random")
    method = methods[choice.lower()]
    name = f"eipu(gamma={gamma:g})" if method == "EIpu" else method.lower()
    return BaselineActor(BaselineConfig(method=method, gamma=gamma), name=name)


def cmd_bench(args) -> int:
    seed = resolve_seed(args.seed)
    out = _out_dir(args.out)
    fns = args.fn or ["sphere"]
    actors = [_make_actor(a, g, args.dim) for a in args.actor for g in
              (args.gamma if a.lower() == "eipu" else args.gamma[:1])]
    seeds = [seed + k for k in range(args.seeds)]
    benchmarks = [make_benchmark(name, args.dim,
                                 np.random.default_rng([seed, sorted(REGISTRY).index(name)]),
                                 probes=args.probes, noise_variance=args.noise)
                  for name in fns]
    reports = []
    for fn in benchmarks:
        for actor in actors:
            rep = run_eval(actor, fn, args.horizon, seeds, workers=args.workers,
                           timing=not args.no_timing)
            reports.append(rep)
            log.info("%s on %s: final mean regret %.4g, mean cost %.4g", actor.name,
                     fn.name, rep.regret[:, -1].mean(), rep.cum_cost[:, -1].mean())
    notes = [f"benchmark {fn.name} d={fn.dimension}: max_estimate={fn.max_estimate!r} "
             f"f_opt={fn.f_opt!r}" for fn in benchmarks]
    write_report_csv(out / "report.csv", reports, notes)
    summary = aggregate_report(reports)
    write_summary_csv(out / "summary.csv", summary)
    write_tables_csv(out / "tables.csv", summary)
    if args.svg:
        from .plotting import plot_regret_vs_cost

        plot_regret_vs_cost(summary, out / "regret_vs_cost.svg")
    for name in sorted(summary.actors):
        s = summary.actors[name]
        print(f"{name:<20} final regret {s.mean_regret[-1]:.4f}  "
              f"[{s.regret_p5[-1]:.4f}, {s.regret_p95[-1]:.4f}]  cost {s.mean_cost[-1]:.3f}")
    return 0


# ---------------------------------------------------------------- rollout

def cmd_rollout(args) -> int:
    seed = resolve_seed(args.seed)
    ckpt = load_checkpoint(args.checkpoint)
    d = ckpt.dimension
    if args.dim is not None and args.dim != d:
        raise ValueError(f"checkpoint is for d={d}, requested d={args.dim}")
    rng = np.random.default_rng(seed)
    if args.prior:
        cfg = ckpt.config
        obj = sample_objective(rng, d, fit_inverse_gamma(cfg.lengthscale_lo, cfg.lengthscale_hi,
                                                         cfg.lengthscale_mass),
                               cfg.num_features, cfg.include_bowl, args.noise)
        label = "prior sample"
    else:
        obj = make_benchmark(args.fn, d, rng, noise_variance=args.noise)
        label = args.fn
    traj = rollout(ckpt.params, obj, args.horizon, rng, ckpt.config.cost_norm)
    out = _out_dir(args.out)
    with open(out / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(d)] + ["value", "observed", "step_cost"])
        costs = np.concatenate([[0.0], traj.step_costs])
        for t in range(traj.horizon + 1):
            w.writerow([t] + [repr(float(v)) for v in traj.points[t]]
                       + [repr(float(traj.true_values[t])), repr(float(traj.observed_values[t])),
                          repr(float(costs[t]))])
    if args.svg:
        from .plotting import grid_values, plot_trajectory

        bg = grid_values(obj.value, d, 64) if d <= 2 else None
        plot_trajectory(traj, out / "trajectory.svg", bg, title=label)
    print(f"best value {traj.true_values.min():.5f}, total cost {traj.step_costs.sum():.4f}")
    return 0


# ---------------------------------------------------------------- sample-prior

def cmd_sample_prior(args) -> int:
    seed = resolve_seed(args.seed)
    rng = np.random.default_rng(seed)
    prior: LengthscalePrior = fit_inverse_gamma()
    obj = sample_objective(rng, args.dim, prior, args.features, not args.no_bowl)
    out = _out_dir(args.out)
    info = {
        "dimension": args.dim,
        "seed": seed,
        "lengthscales": obj.fourier.kernel.lengthscales.tolist(),
        "variance": obj.fourier.kernel.variance,
        "num_features": obj.fourier.num_features,
        "bowl": None if obj.bowl is None else {
            "W": obj.bowl.W.tolist(), "center": obj.bowl.center.tolist(),
            "offset": obj.bowl.offset},
        "value_at_origin": obj.value(np.zeros(args.dim)),
    }
    (out / "sample.json").write_text(json.dumps(info, indent=2) + "\n")
    if args.dim <= 2:
        from .plotting import grid_values

        axis, vals = grid_values(obj.value, args.dim, args.grid)
        with open(out / "grid.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{i + 1}" for i in range(args.dim)] + ["value"])
            if args.dim == 1:
                rows = ([a, v] for a, v in zip(axis, vals))
            else:
                rows = ([a, b, vals[j, i]] for j, b in enumerate(axis)
                        for i, a in enumerate(axis))
            for row in rows:
                w.writerow([repr(float(v)) for v in row])
        if args.svg:
            from .plotting import plot_surface

            plot_surface(axis, vals, out / "sample.svg", title=f"prior sample (seed {seed})")
    elif args.svg:
        log.warning("--svg needs d <= 2; skipping the figure")
    print(json.dumps({k: info[k] for k in ("lengthscales", "variance", "value_at_origin")}))
    return 0


# ---------------------------------------------------------------- grad-check

def cmd_grad_check(args) -> int:
    seed = resolve_seed(args.seed)
    rng = np.random.default_rng(seed)
    cfg = TrainConfig(dimension=args.dim, hidden_size=args.hidden, batch_size=args.batch,
                      horizon_schedule=(args.horizon,), alpha=args.alpha,
                      loss_form=args.loss_form, cost_norm=args.norm,
                      myopic_detach=args.detach, seed=seed)
    params = init_params(args.dim, args.hidden, rng).to_vector()
    batch = sample_batch(cfg, rng)
    _, grad = backprop_rollout(params, batch, cfg)
    n = min(args.coords, len(params))
    coords = np.sort(rng.choice(len(params), size=n, replace=False))
    report = finite_diff_gradient(lambda p: forward_loss(p, batch, cfg), params, coords,
                                  args.h, grad)
    print(report.table([params.coordinate_name(int(c)) for c in coords]))
    if args.detach:
        print("note: the detached objective's update direction is not the gradient of "
              "the reported loss, so a mismatch is expected")
    ok = report.max_rel_err < args.threshold
    print(f"{'PASS' if ok else 'FAIL'}: max_rel_err {report.max_rel_err:.3e} "
          f"{'<' if ok else '>='} {args.threshold:g}")
    return 0 if ok else 1


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mongoose",
                                     description="Meta-learned movement-aware optimiser")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def seeded(p):
        p.add_argument("--seed", type=int, default=None,
                       help="random seed (default: $MONGOOSE_SEED or 0)")
        return p

    p = seeded(sub.add_parser("train", help="meta-train a policy on the prior"))
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--no-timing", action="store_true",
                   help="write 0 wall times so metrics.csv is reproducible")
    p.set_defaults(func=cmd_train)

    p = seeded(sub.add_parser("bench", help="regret-vs-cost evaluation on benchmarks"))
    p.add_argument("--actor", action="append", required=True,
                   help="checkpoint:<path>, ei, eipu or random (repeatable)")
    p.add_argument("--fn", action="append", choices=sorted(REGISTRY),
                   help="benchmark function (repeatable, default sphere)")
    p.add_argument("--dim", type=_positive_int, default=2)
    p.add_argument("--horizon", type=_positive_int, default=50)
    p.add_argument("--seeds", type=_positive_int, default=5, help="number of seeds")
    p.add_argument("--gamma", type=float, nargs="+", default=[1.0],
                   help="EIpu cost scale(s); several values run a sweep")
    p.add_argument("--noise", type=_nonneg_float, default=0.0, help="observation noise variance")
    p.add_argument("--probes", type=_positive_int, default=100_000,
                   help="random probes for the standardisation maximum")
    p.add_argument("--out", default="out")
    p.add_argument("--svg", action="store_true")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--no-timing", action="store_true", help="write 0 wall times")
    p.set_defaults(func=cmd_bench)

    p = seeded(sub.add_parser("rollout", help="run a trained policy once"))
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--fn", choices=sorted(REGISTRY), default="sphere")
    src.add_argument("--prior", action="store_true", help="roll out on a prior sample")
    p.add_argument("--dim", type=_positive_int, default=None)
    p.add_argument("--horizon", type=_positive_int, default=50)
    p.add_argument("--noise", type=_nonneg_float, default=0.0)
    p.add_argument("--out", default="out")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_rollout)

    p = seeded(sub.add_parser("sample-prior", help="draw one objective from the prior"))
    p.add_argument("--dim", type=_positive_int, default=2)
    p.add_argument("--grid", type=_positive_int, default=64, help="grid points per axis")
    p.add_argument("--features", type=_positive_int, default=100)
    p.add_argument("--no-bowl", action="store_true", help="omit the quadratic bowl")
    p.add_argument("--out", default="out")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_sample_prior)

    p = seeded(sub.add_parser("grad-check", help="compare BPTT against finite differences"))
    p.add_argument("--hidden", type=_positive_int, default=8)
    p.add_argument("--dim", type=_positive_int, default=2)
    p.add_argument("--horizon", type=_positive_int, default=5)
    p.add_argument("--batch", type=_positive_int, default=2)
    p.add_argument("--coords", type=_positive_int, default=50)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--alpha", type=_nonneg_float, default=0.0)
    p.add_argument("--loss-form", choices=("divide", "add"), default="divide")
    p.add_argument("--norm", choices=("L1", "L2"), default="L2")
    p.add_argument("--detach", action="store_true", help="use the myopic (detached) objective")
    p.set_defaults(func=cmd_grad_check)
    return parser


_EXPECTED_ERRORS = (ValueError, ConfigError, CheckpointError, OSError, PriorFitError,
                    NonFiniteError, TrainingAborted, np.linalg.LinAlgError)


def run_command(argv=None) -> int:
    """Parse ``argv`` and dispatch; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except _EXPECTED_ERRORS as exc:
        print(f"mongoose {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())
