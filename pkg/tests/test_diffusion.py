import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcrage import diffusion
from mcrage.denoiser import forward, init_params
from mcrage.diffusion import (
    GuidanceConfig,
    NoiseSchedule,
    ScheduleError,
    compute_T_prime,
    dataset_diameter,
    default_schedule,
    forward_sample,
    linear_schedule,
    posterior_variance,
    reverse_step,
)


def test_T_prime_examples():
    assert compute_T_prime(0.25, math.e - 1) == 32
    assert compute_T_prime(0.3, 0.0) == math.ceil(64 * 0.3)
    with pytest.raises(ValueError):
        compute_T_prime(float("nan"), 1.0)


def test_T_prime_can_reach_reported_value():
    # beta_bar * (1 + ln(1 + diam)) just above 34/64 gives the reported chain length.
    diam = math.expm1(34.5 / 64 / 0.3 - 1)
    assert compute_T_prime(0.3, diam) == 35


def test_diameter_examples():
    assert dataset_diameter(np.array([[0.0, 0.0], [3.0, 4.0]])) == 5.0
    assert dataset_diameter(np.array([[1.0, 2.0]])) == 0.0


def test_diameter_brute_force():
    X = np.random.default_rng(1).standard_normal((10, 3))
    brute = max(math.dist(a, b) for a, b in combinations(X.tolist(), 2))
    assert dataset_diameter(X) == pytest.approx(brute, rel=1e-14)


def test_diameter_large_is_upper_bound():
    X = np.random.default_rng(2).standard_normal((5000, 2))
    sub = X[:400]
    exact_sub = dataset_diameter(sub)
    assert dataset_diameter(X) >= exact_sub
    assert dataset_diameter(X) == pytest.approx(np.sqrt(np.sum(np.ptp(X, 0) ** 2)))


def test_linear_schedule_constant():
    s = NoiseSchedule(np.array([0.5, 0.5]))
    np.testing.assert_allclose(s.alpha_bar, [0.5, 0.25])


def test_linear_schedule_endpoints_and_terminal():
    s = linear_schedule(35, 0.02, 0.35)
    assert s.beta[0] == 0.02 and s.beta[-1] == 0.35
    assert s.alpha_bar[-1] < 1e-3
    assert np.all(np.diff(s.alpha_bar) < 0)
    with pytest.raises(ScheduleError):
        linear_schedule(35, 0.02, 1.0)
    with pytest.raises(ScheduleError, match="raise beta_end"):
        linear_schedule(10, 0.001, 0.01)


def test_default_schedule_picks_smallest_adequate_grid_value():
    s = default_schedule(0.0)
    T0 = compute_T_prime(0.3, 0.0)
    # 0.3 with T'=20 is inadequate, so a larger grid value is chosen
    with pytest.raises(ScheduleError):
        linear_schedule(T0, 0.02, 0.3)
    assert s.beta_bar > 0.3
    assert s.T_prime == compute_T_prime(s.beta_bar, 0.0)
    fixed = default_schedule(5.0, T_prime=35)
    assert fixed.T_prime == 35 and fixed.alpha_bar[-1] < 1e-3


def test_schedule_rejects_decreasing():
    with pytest.raises(ScheduleError):
        NoiseSchedule(np.array([0.3, 0.2]))


def test_forward_sample_examples():
    s = NoiseSchedule(np.array([0.5, 0.5]))  # alpha_bar_2 = 0.25
    np.testing.assert_allclose(forward_sample([2.0, 0.0], 2, [0.0, 1.0], s), [1.0, math.sqrt(0.75)])
    tiny = NoiseSchedule(np.array([1e-12, 0.5]))
    x0 = np.array([1.3, -0.7])
    np.testing.assert_allclose(forward_sample(x0, 1, [5.0, 5.0], tiny), x0, atol=1e-5)
    with pytest.raises(ValueError):
        forward_sample(x0, 3, x0, s)


def test_forward_sample_variance_monte_carlo():
    s = linear_schedule(40, 0.02, 0.3)
    t = 5
    eps = np.random.default_rng(0).standard_normal((100_000, 1))
    xt = forward_sample(np.zeros((100_000, 1)), np.full(100_000, t), eps, s)
    assert xt.var() == pytest.approx(1 - s.alpha_bar[t - 1], rel=0.02)


def test_posterior_variance_example():
    # abar_{t-1} = 0.5, abar_t = 0.25, beta_t = 0.5
    s = NoiseSchedule(np.array([0.5, 0.5]))
    assert posterior_variance(s, 2) == pytest.approx(1 / 3)
    assert posterior_variance(s, 1) == 0.0
    assert posterior_variance(s, 2, paper_variance=True) == pytest.approx(0.5)


def test_reverse_step_zero_noise_path():
    s = linear_schedule(30, 0.02, 0.4)
    x = np.array([0.4, -1.1])
    t = 7
    np.testing.assert_allclose(reverse_step(x, t, np.zeros(2), s, np.zeros(2)), x / math.sqrt(s.alpha[t - 1]))


def test_reverse_step_single_step_roundtrip():
    s = linear_schedule(30, 0.02, 0.4)
    rng = np.random.default_rng(3)
    x0, eps = rng.standard_normal(4), rng.standard_normal(4)
    x1 = forward_sample(x0, 1, eps, s)
    np.testing.assert_allclose(reverse_step(x1, 1, eps, s, rng.standard_normal(4)), x0, atol=1e-9)


@settings(deadline=None, max_examples=60)
@given(st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_reverse_mean_is_posterior_mean(t, seed):
    """With the true noise, the reverse mean is E[x_{t-1} | x_t, x_0]."""
    s = linear_schedule(30, 0.02, 0.4)
    rng = np.random.default_rng(seed)
    x0, eps = rng.standard_normal(3), rng.standard_normal(3)
    xt = forward_sample(x0, t, eps, s)
    ab = s.alpha_bar[t - 1]
    ab_prev = s.alpha_bar[t - 2] if t > 1 else 1.0
    b, a = s.beta[t - 1], s.alpha[t - 1]
    post = (math.sqrt(ab_prev) * b / (1 - ab)) * x0 + (math.sqrt(a) * (1 - ab_prev) / (1 - ab)) * xt
    np.testing.assert_allclose(reverse_step(xt, t, eps, s, np.zeros(3)), post, atol=1e-9)


@pytest.fixture(scope="module")
def model():
    s = linear_schedule(12, 0.3, 0.9)
    return init_params(2, 3, e=4, hidden=8, seed=0, T_prime=12, p_uncond=0.1), s


def test_sample_deterministic_and_finite(model):
    params, s = model
    a = diffusion.sample(params, s, 1, 50, seed=4)
    b = diffusion.sample(params, s, 1, 50, seed=4)
    assert a.shape == (50, 2) and np.all(np.isfinite(a))
    assert np.array_equal(a, b)
    assert diffusion.sample(params, s, 1, 0, seed=4).shape == (0, 2)


def test_sample_zero_guidance_never_queries_unconditional(model, monkeypatch):
    params, s = model
    seen = []
    real = diffusion.denoiser.forward

    def spy(p, x, t, c, dropout_mask=None):
        seen.extend(np.unique(c).tolist())
        return real(p, x, t, c, dropout_mask)

    base = diffusion.sample(params, s, 2, 20, GuidanceConfig(0.0), seed=1)
    monkeypatch.setattr(diffusion.denoiser, "forward", spy)
    again = diffusion.sample(params, s, 2, 20, GuidanceConfig(0.0), seed=1)
    assert set(seen) == {2}
    assert np.array_equal(base, again)


def test_sample_guidance_combination(model):
    params, s = model
    x = np.random.default_rng(0).standard_normal((5, 2))
    w = 1.5
    got = diffusion.guided_eps(params, x, 4, 1, GuidanceConfig(w))
    t = np.full(5, 4)
    want = (1 + w) * forward(params, x, t, np.full(5, 1)) - w * forward(params, x, t, np.full(5, params.G))
    np.testing.assert_allclose(got, want)


def test_sample_guidance_requires_unconditional_training(model):
    params, s = model
    params0 = init_params(2, 3, e=4, hidden=8, seed=0, T_prime=12, p_uncond=0.0)
    with pytest.raises(ValueError, match="p_uncond"):
        diffusion.sample(params0, s, 0, 3, GuidanceConfig(1.0))
    with pytest.raises(ValueError):
        diffusion.sample(params, s, 3, 3)


def test_sample_divergence_reports_step(model):
    params, s = model
    bad = params.copy()
    bad.b3[:] = 1e308
    with pytest.raises(diffusion.SamplingDivergedError, match="t=12"):
        with np.errstate(all="ignore"):
            diffusion.sample(bad, s, 0, 3, seed=0)
