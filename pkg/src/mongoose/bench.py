"""Analytic benchmark suite, output standardisation and regret-vs-cost evaluation."""

from __future__ import annotations

import csv
import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy import optimize

from .baselines import BaselineConfig, run_baseline_loop
from .policy import PolicyParams, Trajectory, rollout

__all__ = [
    "BenchmarkFn",
    "EvalReport",
    "ActorSummary",
    "AggregateSummary",
    "PolicyActor",
    "BaselineActor",
    "REGISTRY",
    "make_benchmark",
    "run_eval",
    "aggregate_report",
    "write_report_csv",
    "write_summary_csv",
    "write_tables_csv",
    "REPORT_COLUMNS",
    "SUMMARY_COLUMNS",
]

# raw evaluators take (n, d) points in the native domain and return (n,)


def sphere(x):
    return (x * x).sum(-1)


def rastrigin(x):
    return 10.0 * x.shape[-1] + (x * x - 10.0 * np.cos(2 * np.pi * x)).sum(-1)


def ackley(x):
    r = np.sqrt((x * x).mean(-1))
    return (-20.0 * np.exp(-0.2 * r) - np.exp(np.cos(2 * np.pi * x).mean(-1))
            + 20.0 + np.e)


def rosenbrock(x):
    return (100.0 * (x[..., 1:] - x[..., :-1] ** 2) ** 2 + (1.0 - x[..., :-1]) ** 2).sum(-1)


def branin(x):
    x1, x2 = x[..., 0], x[..., 1]
    b, c = 5.1 / (4 * np.pi ** 2), 5.0 / np.pi
    t = 1.0 / (8 * np.pi)
    return (x2 - b * x1 ** 2 + c * x1 - 6.0) ** 2 + 10.0 * (1 - t) * np.cos(x1) + 10.0


_H3_A = np.array([[3.0, 10, 30], [0.1, 10, 35], [3.0, 10, 30], [0.1, 10, 35]])
_H3_P = 1e-4 * np.array([[3689, 1170, 2673], [4699, 4387, 7470],
                         [1091, 8732, 5547], [381, 5743, 8828]])
_H6_A = np.array([[10, 3, 17, 3.5, 1.7, 8], [0.05, 10, 17, 0.1, 8, 14],
                  [3, 3.5, 1.7, 10, 17, 8], [17, 8, 0.05, 10, 0.1, 14]])
_H6_P = 1e-4 * np.array([[1312, 1696, 5569, 124, 8283, 5886],
                         [2329, 4135, 8307, 3736, 1004, 9991],
                         [2348, 1451, 3522, 2883, 3047, 6650],
                         [4047, 8828, 8732, 5743, 1091, 381]])
_H_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])


def _hartmann(A, P):
    def f(x):
        inner = (A * (x[..., None, :] - P) ** 2).sum(-1)
        return -(_H_ALPHA * np.exp(-inner)).sum(-1)
    return f


@dataclass(frozen=True)
class _Entry:
    raw: Callable[[np.ndarray], np.ndarray]
    bounds: Callable[[int], tuple[np.ndarray, np.ndarray]]
    minimisers: Callable[[int], np.ndarray]  # (k, d) native coordinates
    dims: Callable[[int], bool]
    dims_text: str


def _box(lo, hi):
    return lambda d: (np.full(d, lo), np.full(d, hi))


REGISTRY: dict[str, _Entry] = {
    "sphere": _Entry(sphere, _box(-5.0, 5.0), lambda d: np.zeros((1, d)),
                     lambda d: d >= 1, "any d >= 1"),
    "rastrigin": _Entry(rastrigin, _box(-5.12, 5.12), lambda d: np.zeros((1, d)),
                        lambda d: d >= 1, "any d >= 1"),
    "rosenbrock": _Entry(rosenbrock, _box(-2.048, 2.048), lambda d: np.ones((1, d)),
                         lambda d: d >= 2, "any d >= 2"),
    "ackley": _Entry(ackley, _box(-32.768, 32.768), lambda d: np.zeros((1, d)),
                     lambda d: d >= 1, "any d >= 1"),
    "branin": _Entry(branin, lambda d: (np.array([-5.0, 0.0]), np.array([10.0, 15.0])),
                     lambda d: np.array([[-np.pi, 12.275], [np.pi, 2.275],
                                         [9.42478, 2.475]]),
                     lambda d: d == 2, "d = 2"),
    "hartmann3": _Entry(_hartmann(_H3_A, _H3_P), _box(0.0, 1.0),
                        lambda d: np.array([[0.114614, 0.555649, 0.852547]]),
                        lambda d: d == 3, "d = 3"),
    "hartmann6": _Entry(_hartmann(_H6_A, _H6_P), _box(0.0, 1.0),
                        lambda d: np.array([[0.20169, 0.150011, 0.476874, 0.275332,
                                             0.311652, 0.6573]]),
                        lambda d: d == 6, "d = 6"),
}


@dataclass
class BenchmarkFn:
    """A benchmark on ``[0, 1]^d`` with standardised outputs.

    ``value(x) = raw(x) / max_estimate * 6 - 3 + f_opt`` where ``raw`` is the
    native function (Hartmann functions shifted so their minimum is 0) composed
    with the affine map from the unit cube onto the native box.
    """

    name: str
    dimension: int
    lower: np.ndarray
    upper: np.ndarray
    raw_native: Callable[[np.ndarray], np.ndarray]
    raw_shift: float
    raw_min: float
    minimisers: np.ndarray  # unit-cube coordinates
    max_estimate: float
    f_opt: float
    noise_variance: float = 0.0

    def to_native(self, x):
        return self.lower + np.asarray(x, dtype=float) * (self.upper - self.lower)

    def raw(self, x):
        """Unnormalised value at unit-cube point(s) ``x``."""
        x = np.asarray(x, dtype=float)
        return self.raw_native(self.to_native(x)) - self.raw_shift

    def normalise(self, raw):
        return np.asarray(raw) / self.max_estimate * 6.0 - 3.0 + self.f_opt

    def values(self, X):
        return self.normalise(self.raw(np.atleast_2d(X)))

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            raise ValueError(f"expected a point of shape ({self.dimension},), got {x.shape}")
        return float(self.values(x[None])[0])

    @property
    def min_value(self) -> float:
        return float(self.normalise(self.raw_min))

    @property
    def normalisation(self) -> dict[str, float]:
        return {"max_estimate": self.max_estimate, "f_opt": self.f_opt,
                "raw_shift": self.raw_shift}


_CORNER_DIM_LIMIT = 12


def _polish_max(fn, starts, d):
    best_x, best = None, -np.inf
    for x0 in starts:
        res = optimize.minimize(lambda z: -float(fn(z[None])[0]), x0, method="L-BFGS-B",
                                bounds=[(0.0, 1.0)] * d)
        if -res.fun > best:
            best_x, best = res.x, -res.fun
    return best_x, best


def make_benchmark(name: str, d: int, rng: np.random.Generator, probes: int = 100_000,
                   polish: int = 10, noise_variance: float = 0.0) -> BenchmarkFn:
    """Build a standardised benchmark.

    The maximum used for standardisation comes from ``probes`` uniform random
    points (plus the cube corners in low dimension), with the best ``polish``
    of them refined by bounded L-BFGS-B so the estimate is not below the
    maxima of later random probes.
    """
    if name not in REGISTRY:
        raise ValueError(f"unknown benchmark {name!r}; available: {', '.join(sorted(REGISTRY))}")
    entry = REGISTRY[name]
    if not entry.dims(d):
        raise ValueError(f"{name} needs {entry.dims_text}, got d={d}")
    lo, hi = entry.bounds(d)
    mins = (entry.minimisers(d) - lo) / (hi - lo)

    def unit(x):
        return entry.raw(lo + x * (hi - lo))

    shift = 0.0
    if name.startswith("hartmann"):
        # shift by the polished minimum so the raw function is >= 0
        res = optimize.minimize(lambda z: float(unit(z[None])[0]), mins[0], method="L-BFGS-B",
                                bounds=[(0.0, 1.0)] * d, options={"ftol": 1e-15, "gtol": 1e-12})
        mins = res.x[None]
        shift = float(res.fun)
    raw_min = float(unit(mins).min()) - shift

    X = rng.uniform(size=(probes, d))
    if d <= _CORNER_DIM_LIMIT:
        # maxima of bowl-like functions often sit on cube corners
        corners = np.array(list(itertools.product((0.0, 1.0), repeat=d)))
        X = np.concatenate([X, corners])
    vals = unit(X) - shift
    top = np.argsort(-vals)[:polish]
    _, polished = _polish_max(lambda z: unit(z) - shift, X[top], d)
    max_estimate = float(max(vals.max(), polished))
    f_opt = float(rng.uniform())
    return BenchmarkFn(name, d, lo, hi, entry.raw, shift, raw_min, mins, max_estimate,
                       f_opt, noise_variance)


class Actor(Protocol):
    name: str

    def run(self, objective, T: int, rng: np.random.Generator) -> Trajectory: ...


@dataclass
class PolicyActor:
    params: PolicyParams
    name: str = "policy"
    cost_norm: str = "L2"

    def run(self, objective, T, rng):
        return rollout(self.params, objective, T, rng, self.cost_norm)


@dataclass
class BaselineActor:
    config: BaselineConfig
    name: str = ""

    def __post_init__(self):
        if not self.name:
            self.name = self.config.method.lower()

    def run(self, objective, T, rng):
        return run_baseline_loop(objective, T, self.config, rng)


@dataclass
class EvalReport:
    """Per-seed regret/cost series; index ``t`` of each row is step ``t`` (0..T)."""

    actor: str
    fn: str
    seeds: list[int]
    regret: np.ndarray  # (S, T + 1)
    cum_cost: np.ndarray  # (S, T + 1)
    wall_time: np.ndarray  # (S,)
    trajectories: list[Trajectory] = field(default_factory=list, repr=False)

    @property
    def horizon(self) -> int:
        return self.regret.shape[1] - 1


def regret_and_cost(traj: Trajectory, min_value: float) -> tuple[np.ndarray, np.ndarray]:
    regret = np.minimum.accumulate(traj.true_values) - min_value
    cost = np.concatenate([[0.0], np.cumsum(traj.step_costs)])
    return regret, cost


def run_eval(actor: Actor, fn: BenchmarkFn, T: int, seeds: Sequence[int], workers: int = 1,
             timing: bool = True) -> EvalReport:
    """Evaluate ``actor`` on ``fn`` once per seed.

    Each seed owns ``default_rng(seed)``, so results do not depend on the
    evaluation order or on ``workers``. Cumulative cost counts every hop,
    including the one away from the origin.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    seeds = [int(s) for s in seeds]

    def one(seed):
        start = time.perf_counter()
        traj = actor.run(fn, T, np.random.default_rng(seed))
        elapsed = time.perf_counter() - start
        return traj, (elapsed if timing else 0.0)

    if workers > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    regrets, costs = zip(*(regret_and_cost(tr, fn.min_value) for tr, _ in results))
    return EvalReport(actor.name, fn.name, seeds, np.array(regrets), np.array(costs),
                      np.array([w for _, w in results]), [tr for tr, _ in results])


@dataclass
class ActorSummary:
    actor: str
    mean_regret: np.ndarray
    regret_p5: np.ndarray
    regret_p95: np.ndarray
    mean_cost: np.ndarray
    cost_p5: np.ndarray
    cost_p95: np.ndarray
    runs: int


@dataclass
class AggregateSummary:
    horizon: int
    actors: dict[str, ActorSummary]
    regret_levels: np.ndarray
    cost_at_regret: dict[str, np.ndarray]
    cost_budgets: np.ndarray
    regret_at_cost: dict[str, np.ndarray]


def _cost_to_reach(s: ActorSummary, level: float) -> float:
    hit = np.nonzero(s.mean_regret <= level)[0]
    return float(s.mean_cost[hit[0]]) if hit.size else float("nan")


def _regret_within(s: ActorSummary, budget: float) -> float:
    ok = np.nonzero(s.mean_cost <= budget)[0]
    return float(s.mean_regret[ok[-1]]) if ok.size else float("nan")


def aggregate_report(reports: Sequence[EvalReport], levels: int = 5) -> AggregateSummary:
    """Pool runs per actor (across functions and seeds) into mean curves and bands.

    Bands are the 5th/95th percentiles across runs. The matched tables give
    the mean cost at which each actor's mean regret first reaches a set of
    regret levels, and the mean regret reached within a set of cost budgets.
    """
    if not reports:
        raise ValueError("no reports to aggregate")
    horizons = {r.horizon for r in reports}
    if len(horizons) != 1:
        raise ValueError(f"reports have mismatched horizons {sorted(horizons)}")
    pooled: dict[str, tuple[list, list]] = {}
    for r in sorted(reports, key=lambda r: (r.actor, r.fn)):
        reg, cost = pooled.setdefault(r.actor, ([], []))
        reg.append(r.regret)
        cost.append(r.cum_cost)
    actors = {}
    for name, (reg, cost) in pooled.items():
        R, C = np.concatenate(reg), np.concatenate(cost)
        actors[name] = ActorSummary(
            name, R.mean(0), np.percentile(R, 5, axis=0), np.percentile(R, 95, axis=0),
            C.mean(0), np.percentile(C, 5, axis=0), np.percentile(C, 95, axis=0), len(R))
    start = max(s.mean_regret[0] for s in actors.values())
    floor = max(s.mean_regret[-1] for s in actors.values())
    regret_levels = np.linspace(start, floor, levels + 1)[1:]
    budget_top = min(s.mean_cost[-1] for s in actors.values())
    cost_budgets = np.linspace(0.0, budget_top, levels + 1)[1:]
    return AggregateSummary(
        horizons.pop(), actors, regret_levels,
        {n: np.array([_cost_to_reach(s, lv) for lv in regret_levels]) for n, s in actors.items()},
        cost_budgets,
        {n: np.array([_regret_within(s, b) for b in cost_budgets]) for n, s in actors.items()})


REPORT_COLUMNS = ("actor", "fn", "seed", "step", "regret", "cum_cost", "wall_time")
SUMMARY_COLUMNS = ("actor", "step", "mean_regret", "regret_p5", "regret_p95",
                   "mean_cum_cost", "cum_cost_p5", "cum_cost_p95")

REPORT_NOTES = (
    "regret: best true standardised value so far minus the known minimum",
    "cum_cost: sum of L2 hops from the origin x_0 onward (the x_0 -> x_1 hop is charged)",
    "training penalties charge hops from x_1 onward only",
    "GP baselines: the warm-start design used for hyperparameters is not charged",
    "wall_time: seconds per run (0 when timing is disabled)",
)


def _fmt(v) -> str:
    return repr(float(v))


def write_report_csv(path, reports: Sequence[EvalReport], notes: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in (*REPORT_NOTES, *notes):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            for k, seed in enumerate(r.seeds):
                for t in range(r.horizon + 1):
                    w.writerow([r.actor, r.fn, seed, t, _fmt(r.regret[k, t]),
                                _fmt(r.cum_cost[k, t]), _fmt(r.wall_time[k])])


def write_summary_csv(path, summary: AggregateSummary) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for name in sorted(summary.actors):
            s = summary.actors[name]
            for t in range(summary.horizon + 1):
                w.writerow([name, t] + [_fmt(a[t]) for a in (
                    s.mean_regret, s.regret_p5, s.regret_p95, s.mean_cost, s.cost_p5,
                    s.cost_p95)])


def write_tables_csv(path, summary: AggregateSummary) -> None:
    """Matched tables: one row per (table, threshold, actor)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("table", "threshold", "actor", "value"))
        for name in sorted(summary.actors):
            for lv, v in zip(summary.regret_levels, summary.cost_at_regret[name]):
                w.writerow(("cost_at_regret", _fmt(lv), name, _fmt(v)))
        for name in sorted(summary.actors):
            for b, v in zip(summary.cost_budgets, summary.regret_at_cost[name]):
                w.writerow(("regret_at_cost", _fmt(b), name, _fmt(v)))
