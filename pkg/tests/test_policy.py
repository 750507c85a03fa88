from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mongoose.params import ParamVector
from mongoose.policy import (NonFiniteError, PolicyParams, PolicyState, init_params,
                             policy_step, rollout, step_norms)
from mongoose.prior import (FourierSample, ObjectiveInstance, fit_inverse_gamma,
                            sample_objective)


def constant_objective(d):
    return ObjectiveInstance(FourierSample(np.ones((3, d)), np.zeros(3), np.zeros(3), 1.0))


def test_init_shapes_and_forget_bias():
    p = init_params(2, 128, np.random.default_rng(0))
    assert p.input_weights.shape == (3, 512)
    assert p.recurrent_weights.shape == (128, 512)
    assert p.gate_biases.shape == (512,)
    assert p.decoder_weights.shape == (128, 2)
    assert p.decoder_bias.shape == (2,)
    assert np.all(p.gate_biases[128:256] == 1.0)
    assert np.all(p.gate_biases[:128] == 0.0) and np.all(p.gate_biases[256:] == 0.0)
    assert np.all(p.decoder_bias == 0.0)
    s = 1 / np.sqrt(128)
    for w in (p.input_weights, p.recurrent_weights, p.decoder_weights):
        assert np.abs(w).max() <= s


def test_init_determinism():
    a = init_params(2, 16, np.random.default_rng(1))
    b = init_params(2, 16, np.random.default_rng(1))
    c = init_params(2, 16, np.random.default_rng(2))
    np.testing.assert_array_equal(a.to_vector().values, b.to_vector().values)
    assert not np.array_equal(a.to_vector().values, c.to_vector().values)


def test_init_rejects_bad_sizes():
    with pytest.raises(ValueError):
        init_params(0, 4, np.random.default_rng(0))


def test_params_validation():
    p = init_params(2, 4, np.random.default_rng(0))
    with pytest.raises(ValueError, match="decoder_weights"):
        PolicyParams(p.input_weights, p.recurrent_weights, p.gate_biases,
                     np.zeros((4, 3)), p.decoder_bias)
    bad = p.recurrent_weights.copy()
    bad[0, 0] = np.nan
    with pytest.raises(NonFiniteError):
        PolicyParams(p.input_weights, bad, p.gate_biases, p.decoder_weights, p.decoder_bias)


def test_vector_round_trip():
    p = init_params(3, 5, np.random.default_rng(0))
    vec = p.to_vector()
    assert len(vec) == 4 * 4 * 5 + 5 * 20 + 20 + 5 * 3 + 3
    q = PolicyParams.from_vector(vec)
    np.testing.assert_array_equal(q.recurrent_weights, p.recurrent_weights)
    assert vec.coordinate_name(0) == "input_weights[0,0]"
    assert vec.coordinate_name(len(vec) - 1) == "decoder_bias[2]"
    with pytest.raises(ValueError):
        ParamVector(np.zeros(3), (("a", (2,)),))


def test_zero_decoder_gives_center():
    p = init_params(3, 8, np.random.default_rng(0))
    p.decoder_weights[:] = 0.0
    state = PolicyState.zeros(8)
    for x, y in [(np.zeros(3), 5.0), (np.ones(3), -2.0)]:
        state, nxt = policy_step(p, state, x, y)
        np.testing.assert_array_equal(nxt, 0.5)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(0.1, 20.0))
def test_outputs_strictly_inside_cube(seed, scale):
    rng = np.random.default_rng(seed)
    d, H = 2, 6
    p = init_params(d, H, rng)
    for name in ("input_weights", "recurrent_weights", "decoder_weights"):
        getattr(p, name)[:] *= scale
    state = PolicyState(rng.normal(size=H), rng.normal(size=H))
    for _ in range(200):
        state, x = policy_step(p, state, rng.uniform(size=d), rng.normal() * 3)
        assert np.all((x > 0) & (x < 1))


def test_policy_step_pure():
    rng = np.random.default_rng(0)
    p = init_params(2, 8, rng)
    s = PolicyState(rng.normal(size=8), rng.normal(size=8))
    a = policy_step(p, s, np.array([0.2, 0.4]), 0.3)
    b = policy_step(p, s, np.array([0.2, 0.4]), 0.3)
    np.testing.assert_array_equal(a[1], b[1])
    np.testing.assert_array_equal(a[0].cell, b[0].cell)


def test_policy_step_rejects_non_finite():
    p = init_params(2, 4, np.random.default_rng(0))
    with pytest.raises(NonFiniteError):
        policy_step(p, PolicyState.zeros(4), np.array([0.1, np.nan]), 0.0)
    with pytest.raises(NonFiniteError):
        policy_step(p, PolicyState.zeros(4), np.zeros(2), np.inf)


def test_rollout_structure():
    rng = np.random.default_rng(0)
    p = init_params(2, 8, rng)
    obj = sample_objective(rng, 2, fit_inverse_gamma())
    tr = rollout(p, obj, 1, np.random.default_rng(1))
    assert tr.points.shape == (2, 2)
    np.testing.assert_array_equal(tr.points[0], 0.0)
    np.testing.assert_array_equal(tr.observed_values, tr.true_values)
    tr = rollout(p, obj, 12, np.random.default_rng(1), norm="L1")
    np.testing.assert_array_equal(tr.step_costs, np.abs(np.diff(tr.points, axis=0)).sum(1))
    assert np.all((tr.points[1:] > 0) & (tr.points[1:] < 1))


def test_zero_decoder_rollout_costs():
    d = 3
    p = init_params(d, 8, np.random.default_rng(0))
    p.decoder_weights[:] = 0.0
    obj = sample_objective(np.random.default_rng(1), d, fit_inverse_gamma())
    tr = rollout(p, obj, 5, np.random.default_rng(2))
    assert tr.step_costs[0] == pytest.approx(np.sqrt(d) / 2, abs=1e-15)
    np.testing.assert_array_equal(tr.step_costs[1:], 0.0)


def test_rollout_deterministic_and_noisy():
    rng = np.random.default_rng(0)
    p = init_params(2, 8, rng)
    obj = sample_objective(rng, 2, fit_inverse_gamma(), noise_variance=0.1)
    a = rollout(p, obj, 10, np.random.default_rng(3))
    b = rollout(p, obj, 10, np.random.default_rng(3))
    np.testing.assert_array_equal(a.points, b.points)
    assert not np.array_equal(a.observed_values, a.true_values)


def test_rollout_uses_observed_history():
    # feeding permuted response values changes the trajectory
    rng = np.random.default_rng(4)
    p = init_params(2, 16, rng)
    obj = sample_objective(rng, 2, fit_inverse_gamma())

    class Reversed:
        dimension, noise_variance = 2, 0.0

        def value(self, x):
            return -obj.value(x)

    a = rollout(p, obj, 8, np.random.default_rng(0))
    b = rollout(p, Reversed(), 8, np.random.default_rng(0))
    assert not np.allclose(a.points[2:], b.points[2:])


def test_rollout_dimension_mismatch():
    p = init_params(2, 4, np.random.default_rng(0))
    with pytest.raises(ValueError, match="d=2"):
        rollout(p, constant_objective(3), 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        rollout(p, constant_objective(2), 0, np.random.default_rng(0))


def test_step_norms():
    pts = np.array([[0.0, 0.0], [0.3, 0.4], [0.3, 0.4]])
    np.testing.assert_allclose(step_norms(pts, "L2"), [0.5, 0.0])
    np.testing.assert_allclose(step_norms(pts, "L1"), [0.7, 0.0])
    with pytest.raises(ValueError):
        step_norms(pts, "Linf")
