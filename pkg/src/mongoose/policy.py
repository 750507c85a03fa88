"""The recurrent optimiser: a single-layer LSTM with a sigmoid location decoder.

At every step the cell consumes the last query and its observed value and
emits the next query, which lies strictly inside the unit cube by
construction. Rollouts start from a single evaluation at the origin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

from .params import ParamVector

__all__ = [
    "PolicyParams",
    "PolicyState",
    "Trajectory",
    "NonFiniteError",
    "init_params",
    "policy_step",
    "rollout",
    "step_norms",
    "sigmoid",
]

SEGMENTS = ("input_weights", "recurrent_weights", "gate_biases", "decoder_weights",
            "decoder_bias")


class NonFiniteError(FloatingPointError):
    """A NaN or infinity appeared in a rollout."""


def gate_scales(H: int) -> np.ndarray:
    # sigmoid(z) = 0.5 + 0.5 tanh(z / 2): one tanh call activates all four gates
    s = np.full(4 * H, 0.5)
    s[2 * H:3 * H] = 1.0
    return s


def activate_gates(z: np.ndarray, scale: np.ndarray, out=None) -> np.ndarray:
    """Sigmoid on the input/forget/output gates and tanh on the cell gate."""
    out = np.tanh(z * scale, out=out)
    out *= scale
    out += 1.0 - scale
    return out


@dataclass
class PolicyParams:
    """LSTM gates are stored in the order (input, forget, cell, output)."""

    input_weights: np.ndarray  # (d + 1, 4H)
    recurrent_weights: np.ndarray  # (H, 4H)
    gate_biases: np.ndarray  # (4H,)
    decoder_weights: np.ndarray  # (H, d)
    decoder_bias: np.ndarray  # (d,)

    def __post_init__(self):
        d, H = self.dimension, self.hidden_size
        expected = {
            "input_weights": (d + 1, 4 * H),
            "recurrent_weights": (H, 4 * H),
            "gate_biases": (4 * H,),
            "decoder_weights": (H, d),
            "decoder_bias": (d,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"{name} contains non-finite values")

    @property
    def hidden_size(self) -> int:
        return self.recurrent_weights.shape[0]

    @property
    def dimension(self) -> int:
        return self.decoder_bias.shape[0]

    def to_vector(self) -> ParamVector:
        return ParamVector.from_segments({name: getattr(self, name) for name in SEGMENTS})

    @classmethod
    def from_vector(cls, vec: ParamVector) -> PolicyParams:
        segs = vec.segments()
        missing = [n for n in SEGMENTS if n not in segs]
        if missing:
            raise ValueError(f"parameter vector lacks segments {missing}")
        return cls(**{n: segs[n] for n in SEGMENTS})


@dataclass
class PolicyState:
    hidden: np.ndarray
    cell: np.ndarray

    @classmethod
    def zeros(cls, H: int) -> PolicyState:
        return cls(np.zeros(H), np.zeros(H))


@dataclass
class Trajectory:
    points: np.ndarray  # (T + 1, d), points[0] is the origin
    true_values: np.ndarray  # (T + 1,)
    observed_values: np.ndarray  # (T + 1,)
    step_costs: np.ndarray  # (T,)

    @property
    def horizon(self) -> int:
        return self.points.shape[0] - 1


def step_norms(points: np.ndarray, norm: str = "L2") -> np.ndarray:
    diffs = np.diff(points, axis=-2)
    if norm == "L2":
        return np.sqrt((diffs * diffs).sum(-1))
    if norm == "L1":
        return np.abs(diffs).sum(-1)
    raise ValueError(f"unknown cost norm {norm!r}; expected 'L1' or 'L2'")


def init_params(d: int, H: int, rng: np.random.Generator) -> PolicyParams:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, forget bias +1, other biases 0."""
    if d < 1 or H < 1:
        raise ValueError("d and H must be >= 1")
    s = 1.0 / np.sqrt(H)
    Wx = rng.uniform(-s, s, size=(d + 1, 4 * H))
    Wh = rng.uniform(-s, s, size=(H, 4 * H))
    Wd = rng.uniform(-s, s, size=(H, d))
    b = np.zeros(4 * H)
    b[H:2 * H] = 1.0
    return PolicyParams(Wx, Wh, b, Wd, np.zeros(d))


def policy_step(params: PolicyParams, state: PolicyState, x_t, y_t: float
                ) -> tuple[PolicyState, np.ndarray]:
    x_t = np.asarray(x_t, dtype=float)
    if not (np.all(np.isfinite(x_t)) and np.isfinite(y_t)):
        raise NonFiniteError(f"non-finite policy input x={x_t}, y={y_t}")
    H = params.hidden_size
    u = np.append(x_t, y_t)
    z = u @ params.input_weights + state.hidden @ params.recurrent_weights + params.gate_biases
    gates = activate_gates(z, gate_scales(H))
    i, f, g, o = gates[:H], gates[H:2 * H], gates[2 * H:3 * H], gates[3 * H:]
    cell = f * state.cell + i * g
    hidden = o * np.tanh(cell)
    x_next = sigmoid(hidden @ params.decoder_weights + params.decoder_bias)
    return PolicyState(hidden, cell), x_next


def rollout(params: PolicyParams, obj, T: int, rng: np.random.Generator,
            norm: str = "L2") -> Trajectory:
    """Run the policy for ``T`` steps from the origin on ``obj``.

    ``obj`` needs ``dimension``, ``noise_variance`` and ``value(x)``. The policy
    sees noisy observations; true values are recorded alongside.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    d = params.dimension
    if obj.dimension != d:
        raise ValueError(f"policy is for d={d} but objective has d={obj.dimension}")
    sd = np.sqrt(obj.noise_variance)
    points = np.zeros((T + 1, d))
    true_values = np.empty(T + 1)
    observed = np.empty(T + 1)
    state = PolicyState.zeros(params.hidden_size)
    for t in range(T + 1):
        if t > 0:
            state, points[t] = policy_step(params, state, points[t - 1], observed[t - 1])
        true_values[t] = obj.value(points[t])
        observed[t] = true_values[t] + sd * rng.standard_normal()
    return Trajectory(points, true_values, observed, step_norms(points, norm))
