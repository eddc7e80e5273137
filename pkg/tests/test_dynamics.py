import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from lindpo.dynamics import (
    drift,
    euler_maruyama_step,
    gaussian_kl_same_cov,
    perturb,
    sample,
    score_from_velocity_rf,
    step_rng,
    target_value,
    velocity_from_score,
)
from lindpo.errors import ConfigError, DomainError, ShapeError, SingularityError
from lindpo.schedules import make_schedule
from lindpo.verify import gaussian_rf_velocity

RF = make_schedule("rf")
VE = make_schedule("ve")
VP = make_schedule("vp")
finite = st.floats(-10, 10, allow_nan=False)
vec3 = arrays(np.float64, 3, elements=finite)


def test_perturb_examples():
    np.testing.assert_array_equal(perturb([2.0, 0.0], [0.0, 0.0], 0.5, RF), [1.0, 0.0])
    x0, eps = np.array([1.5, -2.0]), np.array([0.3, 0.9])
    for sch in (RF, VE, VP):
        np.testing.assert_array_equal(perturb(x0, eps, 0.0, sch), x0)
    np.testing.assert_array_equal(perturb(x0, eps, 1.0, RF), eps)


def test_perturb_shape_mismatch():
    with pytest.raises(ShapeError):
        perturb([1.0, 2.0], [1.0], 0.5, RF)


@given(vec3, vec3, finite, finite, st.floats(0, 1))
def test_perturb_affine_in_x0(x0, x1, a, b, t):
    zero = np.zeros(3)
    for sch in (RF, VP, VE):
        lhs = perturb(a * x0 + b * x1, zero, t, sch)
        rhs = a * perturb(x0, zero, t, sch) + b * perturb(x1, zero, t, sch)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-9)


def test_target_examples():
    ve = make_schedule("ve", ve_power=1.0)
    np.testing.assert_array_equal(target_value("score", [0, 0], [1.0, -1.0], 0.5, ve), [-2.0, 2.0])
    np.testing.assert_array_equal(target_value("velocity", [2.0, 0.0], [0.0, 0.0], 0.3, RF), [-2.0, 0.0])
    np.testing.assert_array_equal(target_value("epsilon", [9.0, 9.0], [0.3, 0.7], 0.3, VP), [0.3, 0.7])


def test_score_target_singular_at_zero():
    with pytest.raises(SingularityError):
        target_value("score", [0.0], [1.0], 0.0, VE)


def test_score_from_velocity_examples():
    x = np.array([0.4, -1.3])
    np.testing.assert_allclose(score_from_velocity_rf(x, 1.0, np.array([5.0, 7.0])), -x, atol=1e-15)
    np.testing.assert_array_equal(score_from_velocity_rf(x, 0.5, np.zeros(2)), -2 * x)
    with pytest.raises(SingularityError):
        score_from_velocity_rf(x, 1e-4, x)


@pytest.mark.parametrize("t", [0.2, 0.5, 0.8])
def test_score_identity_gaussian(t):
    s = 2.0
    x = np.linspace(-3, 3, 13)[:, None]
    V = (1 - t) ** 2 * s**2 + t**2
    got = score_from_velocity_rf(x, t, gaussian_rf_velocity(x, t, s))
    np.testing.assert_allclose(got, -x / V, atol=1e-10)


@pytest.mark.parametrize("t", [0.2, 0.5, 0.8])
def test_gaussian_velocity_matches_monte_carlo_posterior(t):
    # E[x1 - x0 | x_t] estimated by binning joint draws near a fixed x_t
    s, n = 2.0, 400_000
    rng = np.random.default_rng(7)
    x0 = s * rng.standard_normal(n)
    x1 = rng.standard_normal(n)
    xt = (1 - t) * x0 + t * x1
    for probe in (-1.0, 0.5):
        near = np.abs(xt - probe) < 0.02
        v = (x1 - x0)[near]
        assert abs(v.mean() - gaussian_rf_velocity(probe, t, s)) < 4 * v.std() / np.sqrt(v.size) + 0.02


@given(vec3, vec3, st.floats(0.01, 0.99))
def test_velocity_score_round_trip(x, v, t):
    back = velocity_from_score(x, t, score_from_velocity_rf(x, t, v), RF)
    np.testing.assert_allclose(back, v, atol=1e-12 * (1 + np.abs(x).max() / t + np.abs(v).max() / t))


def test_velocity_from_score_examples():
    x = np.array([1.0, -3.0])
    np.testing.assert_array_equal(velocity_from_score(x, 0.5, np.zeros(2), RF), -2 * x)
    ve = make_schedule("ve", ve_power=1.0, ve_sigma_max=2.0)
    score = np.array([0.5, 0.25])
    # sigma = 2t, sigma_dot = 2
    np.testing.assert_allclose(velocity_from_score(x, 0.3, score, ve), -(0.6 * 2.0) * score, rtol=1e-15)
    with pytest.raises(SingularityError):
        velocity_from_score(x, 1.0, score, RF)


def test_drift_examples():
    x, v = np.array([1.0, 2.0]), np.array([-0.5, 0.25])
    t = 0.4
    np.testing.assert_allclose(drift(x, t, v, "velocity", RF), v + 0.5 * (x + (1 - t) * v), rtol=1e-15)
    no_noise = make_schedule("rf", sampling_g_scale=0.0)
    np.testing.assert_array_equal(drift(x, t, v, "velocity", no_noise), v)
    np.testing.assert_array_equal(drift(x, t, v, "velocity", RF, probability_flow=True), v)
    ve = make_schedule("ve", ve_power=0.5, ve_sigma_max=1.5)
    np.testing.assert_allclose(drift(x, t, v, "score", ve), -(1.5**2) * v, rtol=1e-14)


def test_epsilon_drift_goes_through_score():
    x, eps = np.array([0.3, -0.7]), np.array([1.1, 0.2])
    t = 0.6
    sigma = VP.sigma(t)
    f, g2 = -1.0, 2.0
    np.testing.assert_allclose(drift(x, t, eps, "epsilon", VP), f * x - g2 * (-eps / sigma), rtol=1e-13)


def test_drift_rejects_cross_pairing_and_window():
    x = np.zeros(2)
    with pytest.raises(ConfigError):
        drift(x, 0.5, x, "score", RF)
    with pytest.raises(ConfigError):
        drift(x, 0.5, x, "velocity", VP)
    with pytest.raises(DomainError):
        drift(x, 0.0, x, "velocity", RF)


def test_euler_maruyama_examples():
    x, d, noise = np.array([1.0, 2.0]), np.array([0.5, -1.0]), np.array([0.3, -0.4])
    nxt, step = euler_maruyama_step(x, 0.5, 0.1, d, 0.0, noise)
    np.testing.assert_array_equal(nxt, x - d * 0.1)
    assert step.variance_scale == 0.0
    nxt, step = euler_maruyama_step(x, 0.5, 1.0, np.zeros(2), 1.0, noise)
    np.testing.assert_array_equal(nxt, x + noise)
    np.testing.assert_array_equal(step.mean, x)
    assert step.variance_scale == 1.0
    for dt in (0.0, -0.1):
        with pytest.raises(DomainError):
            euler_maruyama_step(x, 0.5, dt, d, 1.0, noise)


def test_euler_maruyama_moments():
    n = 10_000
    x, d = np.array([0.7, -0.2]), np.array([1.5, 0.5])
    g, dt = 0.8, 0.05
    noise = np.random.default_rng(3).standard_normal((n, 2))
    nxt, step = euler_maruyama_step(np.broadcast_to(x, (n, 2)), 0.5, dt, d, g, noise)
    mean, var = nxt.mean(axis=0), nxt.var(axis=0, ddof=1)
    s2 = g * g * dt
    assert np.all(np.abs(mean - step.mean[0]) < 4 * np.sqrt(s2 / n))
    assert np.all(np.abs(var - s2) < 4 * s2 * np.sqrt(2 / (n - 1)))


def test_single_step_zero_model_returns_initial_noise():
    sch = make_schedule("rf", sampling_g_scale=0.0)
    zero = lambda x, t, c: np.zeros_like(x)
    for mode in ("ode", "sde"):
        out = sample(zero, sch, "velocity", steps=1, mode=mode, seed=42, n=5, data_dim=3)
        np.testing.assert_array_equal(out, step_rng(42, 0).standard_normal((5, 3)))


def test_constant_field_integration_is_exact():
    # with v = x1 - x0 constant, Euler integration is exact for any step count
    v = np.array([1.0, -2.0])
    const = lambda x, t, c: np.broadcast_to(v, x.shape)
    x_init = step_rng(5, 0).standard_normal((1, 2))[0]
    for steps in (1, 7, 50):
        out = sample(const, RF, "velocity", steps=steps, mode="ode", seed=5, data_dim=2)
        np.testing.assert_allclose(out, x_init - v * (1 - 2 * RF.t_min), atol=1e-13)


@pytest.mark.parametrize("mode", ["ode", "sde"])
def test_gaussian_marginal_moments(mode):
    s, n = 2.0, 10_000
    model = lambda x, t, c: gaussian_rf_velocity(x, t, s)
    xs = sample(model, RF, "velocity", steps=200, mode=mode, seed=21, n=n, data_dim=1)[:, 0]
    var = (1 - RF.t_min) ** 2 * s**2 + RF.t_min**2
    assert abs(xs.mean()) < 4 * np.sqrt(var / n)
    assert abs(xs.var(ddof=1) - s**2) < 0.05 * s**2
    assert abs(xs.var(ddof=1) - var) < 4 * var * np.sqrt(2 / (n - 1))


def test_sample_is_deterministic_and_validates():
    model = lambda x, t, c: -x
    a = sample(model, RF, "velocity", steps=10, mode="sde", seed=3, n=4, data_dim=2)
    b = sample(model, RF, "velocity", steps=10, mode="sde", seed=3, n=4, data_dim=2)
    np.testing.assert_array_equal(a, b)
    assert sample(model, RF, "velocity", steps=3, seed=3, data_dim=2).shape == (2,)
    with pytest.raises(DomainError):
        sample(model, RF, "velocity", steps=0, data_dim=2)
    with pytest.raises(ConfigError):
        sample(model, RF, "velocity", steps=3, mode="heun", data_dim=2)


def test_kl_examples():
    assert gaussian_kl_same_cov([1.0, 2.0], [1.0, 2.0], 3.0) == 0.0
    assert gaussian_kl_same_cov([0.0, 0.0], [0.6, 0.8], 1.0) == pytest.approx(0.5, abs=1e-15)
    for bad in (0.0, -1.0):
        with pytest.raises(DomainError):
            gaussian_kl_same_cov([0.0], [1.0], bad)


@pytest.mark.parametrize("s", [0.25, 1.0, 4.0])
def test_kl_against_monte_carlo(s):
    rng = np.random.default_rng(99)
    n = 100_000
    for _ in range(10):
        mu_a = rng.normal(size=2)
        ang = rng.uniform(0, 2 * np.pi)
        mu_b = mu_a + rng.uniform(3, 6) * np.array([np.cos(ang), np.sin(ang)])
        x = mu_a + np.sqrt(s) * rng.standard_normal((n, 2))
        # log N(x; mu_a, sI) - log N(x; mu_b, sI)
        mc = np.mean((np.sum((x - mu_b) ** 2, 1) - np.sum((x - mu_a) ** 2, 1)) / (2 * s))
        exact = gaussian_kl_same_cov(mu_a, mu_b, s)
        assert abs(mc - exact) / exact < 0.02
