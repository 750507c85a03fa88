from __future__ import annotations

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mongoose.prior import (FourierSample, KernelSpec, ObjectiveBatch, ObjectiveInstance,
                            PriorFitError, QuadraticBowl, eval_objective, fit_inverse_gamma,
                            matern52, observe_noisy, sample_fourier_features,
                            sample_kernel_spec, sample_objective, sample_quadratic_bowl,
                            sample_wishart)

# Frozen output of the regularised-gamma bisection oracle below (30 digits).
ORACLE_SHAPE = 14.4431414852206125988380580605
ORACLE_SCALE = 2.6091642514071195332207202216


def _invgamma_cdf(x, a, b):
    return mp.gammainc(a, b / x, mp.inf, regularized=True)


def _bisect(fn, lo, hi, n):
    flo = fn(lo)
    for _ in range(n):
        mid = (lo + hi) / 2
        fmid = fn(mid)
        if (fmid > 0) == (flo > 0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return (lo + hi) / 2


def invgamma_oracle(lo, hi, mass, n_inner=70, n_outer=55):
    """Nested bisection: scale from the lower quantile, shape from the upper."""
    with mp.workdps(25):
        tail = (1 - mp.mpf(mass)) / 2
        lo, hi = mp.mpf(lo), mp.mpf(hi)

        def scale_for(a):
            return _bisect(lambda b: _invgamma_cdf(lo, a, b) - tail, mp.mpf("1e-3"),
                           mp.mpf(100), n_inner)

        a = _bisect(lambda a: _invgamma_cdf(hi, a, scale_for(a)) - (1 - tail), mp.mpf(1),
                    mp.mpf(100), n_outer)
        return float(a), float(scale_for(a))


def test_inverse_gamma_quantiles():
    prior = fit_inverse_gamma(0.1, 0.4, 0.99)
    q_lo, q_hi = prior.quantiles()
    assert abs(q_lo - 0.1) < 1e-6
    assert abs(q_hi - 0.4) < 1e-6
    assert prior.shape == pytest.approx(ORACLE_SHAPE, rel=1e-10)
    assert prior.scale == pytest.approx(ORACLE_SCALE, rel=1e-10)


def test_inverse_gamma_matches_live_oracle():
    shape, scale = invgamma_oracle(0.2, 0.5, 0.9)
    prior = fit_inverse_gamma(0.2, 0.5, 0.9)
    assert prior.shape == pytest.approx(shape, rel=1e-8)
    assert prior.scale == pytest.approx(scale, rel=1e-8)


@settings(max_examples=25, deadline=None)
@given(lo=st.floats(0.02, 1.0), ratio=st.floats(1.5, 6.0), mass=st.floats(0.5, 0.995))
def test_inverse_gamma_defining_property(lo, ratio, mass):
    prior = fit_inverse_gamma(lo, lo * ratio, mass)
    q_lo, q_hi = prior.quantiles()
    assert abs(q_lo - lo) < 1e-6
    assert abs(q_hi - lo * ratio) < 1e-6
    assert fit_inverse_gamma(lo, lo * ratio, mass) == prior


@pytest.mark.parametrize("args", [(0.4, 0.1, 0.99), (0.0, 0.4, 0.99), (0.1, 0.4, 1.0)])
def test_inverse_gamma_rejects_bad_input(args):
    with pytest.raises(ValueError):
        fit_inverse_gamma(*args)


def test_inverse_gamma_reports_nonconvergence():
    # an interval too wide for the iteration budget
    with pytest.raises(PriorFitError, match="residuals"):
        fit_inverse_gamma(1e-6, 1e6, 0.999999, max_iter=3)


def test_lengthscale_draws_quantiles():
    prior = fit_inverse_gamma()
    rng = np.random.default_rng(0)
    draws = np.array([sample_kernel_spec(prior, 1, rng).lengthscales[0]
                      for _ in range(100_000)])
    assert np.all(draws > 0)
    assert 0.09 <= np.quantile(draws, 0.005) <= 0.11
    assert 0.36 <= np.quantile(draws, 0.995) <= 0.44


def test_kernel_spec_deterministic():
    prior = fit_inverse_gamma()
    a = sample_kernel_spec(prior, 3, np.random.default_rng(5))
    b = sample_kernel_spec(prior, 3, np.random.default_rng(5))
    np.testing.assert_array_equal(a.lengthscales, b.lengthscales)
    assert a.variance == 1.0


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec(np.array([0.1, -0.2]))
    with pytest.raises(ValueError):
        KernelSpec(np.array([0.1]), variance=0.0)
    with pytest.raises(ValueError):
        KernelSpec(np.array([0.1]), family="RBF")


def test_fourier_amplitude_and_phases():
    rng = np.random.default_rng(1)
    fs = sample_fourier_features(KernelSpec(np.array([0.3, 0.2])), 100, rng)
    assert fs.amplitude == np.sqrt(2.0 / 100)
    assert np.all((fs.phases >= 0) & (fs.phases < 2 * np.pi))
    assert fs.frequencies.shape == (100, 2)
    fs2 = sample_fourier_features(KernelSpec(np.array([0.3]), variance=2.5), 64, rng)
    assert fs2.amplitude == np.sqrt(2.0 * 2.5 / 64)


def rff_values(points, ell, M, n, seed):
    """Values of ``n`` independent 1-d feature draws at ``points``: (n, len(points))."""
    rng = np.random.default_rng(seed)
    kernel = KernelSpec(np.array([ell]))
    out = np.empty((n, len(points)))
    for k in range(n):
        fs = sample_fourier_features(kernel, M, rng)
        out[k] = fs.amplitude * np.cos(np.outer(points, fs.frequencies[:, 0])
                                       + fs.phases) @ fs.weights
    return out


def test_rff_stationarity():
    # same lag at shifted locations gives the same covariance
    pts = np.array([0.1, 0.35, 0.6, 0.85])
    F = rff_values(pts, 0.25, 2048, 4096, seed=3)
    c1 = np.mean(F[:, 0] * F[:, 1])
    c2 = np.mean(F[:, 2] * F[:, 3])
    target = matern52(0.25, 0.25)
    assert abs(c1 - target) < 0.05
    assert abs(c2 - target) < 0.05
    assert abs(c1 - c2) < 0.05


def test_matern_closed_form():
    assert matern52(0.0, 0.3) == 1.0
    r, ell = 0.2, 0.25
    s = np.sqrt(5) * r / ell
    assert matern52(r, ell, 2.0) == pytest.approx(2.0 * (1 + s + s * s / 3) * np.exp(-s))
    K = KernelSpec(np.array([0.2, 0.5]), 1.5)
    x = np.array([[0.1, 0.2]])
    y = np.array([[0.4, 0.9]])
    r = np.linalg.norm((x - y) / np.array([0.2, 0.5]))
    assert K(x, y)[0, 0] == pytest.approx(matern52(r, 1.0, 1.5), rel=1e-12)


def test_wishart_moments_and_psd():
    rng = np.random.default_rng(0)
    d = 4
    draws = np.array([sample_wishart(np.eye(d) / d, d, rng) for _ in range(10_000)])
    assert np.abs(draws.mean(0) - np.eye(d)).max() < 0.1
    assert np.linalg.eigvalsh(draws).min() >= -1e-10
    # second moment: Var(W_ij) = n (s_ij^2 + s_ii s_jj) with s = I/d, n = d
    var = draws.var(0)
    expected = d * (np.eye(d) / d ** 2 + np.ones((d, d)) / d ** 2)
    assert np.abs(var - expected).max() < 0.1


def test_wishart_against_scipy_reference():
    rng = np.random.default_rng(1)
    d = 3
    ours = np.array([sample_wishart(np.eye(d) / d, d, rng) for _ in range(20_000)])
    ref = stats.wishart(df=d, scale=np.eye(d) / d).rvs(20_000, random_state=2)
    for stat in (lambda w: w[:, 0, 0], lambda w: w[:, 0, 1], np.linalg.det):
        assert stats.ks_2samp(stat(ours), stat(ref)).pvalue > 1e-3


def test_bowl_construction():
    rng = np.random.default_rng(2)
    for d in (1, 2, 5):
        for _ in range(50):
            bowl = sample_quadratic_bowl(d, rng)
            assert np.array_equal(bowl.W, bowl.W.T)
            assert np.linalg.eigvalsh(bowl.W).min() >= -1e-10
            assert np.all((bowl.center >= 0.2) & (bowl.center <= 0.8))
            assert bowl.offset == QuadraticBowl.offset_for(bowl.W)
            assert bowl.offset == bowl.W.sum() / (8 * d)


def test_bowl_offset_identity_matrix():
    bowl = QuadraticBowl.from_matrix(np.eye(2), [0.5, 0.5])
    assert bowl.offset == 0.125


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.integers(1, 5))
def test_bowl_convex_along_segments(seed, d):
    rng = np.random.default_rng(seed)
    bowl = sample_quadratic_bowl(d, rng)
    for _ in range(100):
        a, b = rng.uniform(size=(2, d))
        fa, fb = bowl.value_and_grad(a)[0], bowl.value_and_grad(b)[0]
        fm = bowl.value_and_grad((a + b) / 2)[0]
        assert fm <= (fa + fb) / 2 + 1e-12


def _zero_fourier(d, M=4):
    return FourierSample(np.ones((M, d)), np.zeros(M), np.zeros(M), np.sqrt(2.0 / M))


def test_zero_function():
    obj = ObjectiveInstance(_zero_fourier(3))
    v, g = eval_objective(obj, np.array([0.2, 0.7, 0.1]))
    assert v == 0.0
    assert np.all(g == 0.0)


def test_bowl_minimum_at_center():
    obj = ObjectiveInstance(_zero_fourier(2), QuadraticBowl.from_matrix(np.eye(2), [0.5, 0.5]))
    v, g = eval_objective(obj, np.array([0.5, 0.5]))
    assert v == obj.bowl.offset
    np.testing.assert_array_equal(g, 0.0)


def test_eval_dimension_mismatch():
    obj = sample_objective(np.random.default_rng(0), 2, fit_inverse_gamma())
    with pytest.raises(ValueError, match="shape"):
        eval_objective(obj, np.zeros(3))
    with pytest.raises(ValueError):
        ObjectiveInstance(_zero_fourier(2), QuadraticBowl.from_matrix(np.eye(3), np.zeros(3)))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    prior = fit_inverse_gamma()
    h = 1e-6
    for d in (1, 2, 4):
        obj = sample_objective(rng, d, prior)
        for _ in range(20):
            x = rng.uniform(size=d)
            _, g = eval_objective(obj, x)
            fd = np.array([(obj.value(x + h * e) - obj.value(x - h * e)) / (2 * h)
                           for e in np.eye(d)])
            rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-3)
            assert rel.max() < 1e-6


def test_batch_matches_single_evaluation():
    rng = np.random.default_rng(4)
    prior = fit_inverse_gamma()
    insts = [sample_objective(rng, 3, prior, include_bowl=k % 2 == 0) for k in range(5)]
    batch = ObjectiveBatch(insts)
    X = rng.uniform(size=(5, 3))
    v, g = batch.value_and_grad(X)
    for k, obj in enumerate(insts):
        vk, gk = eval_objective(obj, X[k])
        assert v[k] == pytest.approx(vk, abs=1e-13)
        np.testing.assert_allclose(g[k], gk, atol=1e-12)


def test_observe_noisy():
    prior = fit_inverse_gamma()
    obj = sample_objective(np.random.default_rng(5), 2, prior)
    x = np.array([0.3, 0.6])
    assert observe_noisy(obj, x, np.random.default_rng(0)) == obj.value(x)
    noisy = sample_objective(np.random.default_rng(5), 2, prior, noise_variance=0.1)
    rng = np.random.default_rng(1)
    obs = np.array([observe_noisy(noisy, x, rng) for _ in range(10_000)])
    assert 0.09 <= obs.var() <= 0.11
    assert observe_noisy(noisy, x, np.random.default_rng(7)) == \
        observe_noisy(noisy, x, np.random.default_rng(7))


def test_negative_noise_rejected():
    with pytest.raises(ValueError):
        ObjectiveInstance(_zero_fourier(1), None, -0.1)
