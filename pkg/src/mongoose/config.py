"""Training configuration and the flat ``key = value`` config file format.

Example file::

    # desk-scale run
    dimension = 2
    hidden_size = 128
    batch_size = 64
    horizon_schedule = 10, 20
    total_steps = 2000
    alpha = 0.01

Blank lines and ``#`` comments are ignored; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

__all__ = ["TrainConfig", "ConfigError", "default_schedule", "load_config",
           "parse_config", "format_config"]

CURRICULUM_LADDER = (10, 20, 30, 40, 50)


class ConfigError(ValueError):
    pass


def default_schedule(target: int) -> tuple[int, ...]:
    """Curriculum ladder 10, 20, ..., 50 cut below ``target``, ending at ``target``."""
    if target < 1:
        raise ConfigError("target horizon must be >= 1")
    return tuple(h for h in CURRICULUM_LADDER if h < target) + (target,)


@dataclass(frozen=True)
class TrainConfig:
    dimension: int = 2
    hidden_size: int = 128
    batch_size: int = 128
    steps_per_phase: int = 5000
    horizon_schedule: tuple[int, ...] = field(default_factory=lambda: default_schedule(50))
    alpha: float = 0.0
    cost_norm: str = "L2"
    loss_form: str = "divide"
    myopic_detach: bool = False
    include_bowl: bool = True
    noise_variance: float = 0.0
    num_features: int = 100
    lr_initial: float = 1e-3
    lr_reduced: float = 1e-4
    lr_switch_horizon: int = 40
    # 0 means steps_per_phase * number of phases
    total_steps: int = 0
    seed: int = 0
    clip_norm: float = 10.0
    lengthscale_lo: float = 0.1
    lengthscale_hi: float = 0.4
    lengthscale_mass: float = 0.99

    def __post_init__(self):
        sched = tuple(int(h) for h in self.horizon_schedule)
        object.__setattr__(self, "horizon_schedule", sched)
        if not sched or any(h < 1 for h in sched):
            raise ConfigError("horizon_schedule must be a nonempty list of positive horizons")
        if any(b <= a for a, b in zip(sched, sched[1:])):
            raise ConfigError(f"horizon_schedule must be strictly increasing, got {sched}")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.batch_size < 1 or self.hidden_size < 1 or self.dimension < 1:
            raise ConfigError("batch_size, hidden_size and dimension must be >= 1")
        if self.cost_norm not in ("L1", "L2"):
            raise ConfigError(f"cost_norm must be L1 or L2, got {self.cost_norm!r}")
        if self.loss_form not in ("divide", "add"):
            raise ConfigError(f"loss_form must be divide or add, got {self.loss_form!r}")
        if self.noise_variance < 0:
            raise ConfigError("noise_variance must be >= 0")
        if self.steps_per_phase < 1 or self.total_steps < 0:
            raise ConfigError("steps_per_phase must be >= 1 and total_steps >= 0")

    @property
    def target_horizon(self) -> int:
        return self.horizon_schedule[-1]

    def phase_steps(self) -> list[int]:
        """Number of optimisation steps in each curriculum phase."""
        n = len(self.horizon_schedule)
        if not self.total_steps:
            return [self.steps_per_phase] * n
        base, rem = divmod(self.total_steps, n)
        return [base] * (n - 1) + [base + rem]

    def learning_rate(self, horizon: int) -> float:
        return self.lr_reduced if horizon >= self.lr_switch_horizon else self.lr_initial

    def replace(self, **changes) -> TrainConfig:
        return dataclasses.replace(self, **changes)


def _convert(name: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(p) for p in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    known = {f.name for f in fields(TrainConfig)}
    changes = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "target_horizon":
            changes["horizon_schedule"] = default_schedule(int(raw))
            continue
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        changes[key] = _convert(key, raw, getattr(base, key))
    return base.replace(**changes)


def load_config(path) -> TrainConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ", ".join(str(h) for h in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
