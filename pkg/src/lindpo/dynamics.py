"""Forward perturbation, prediction targets, reverse-time drifts and sampling.

Sampling runs backward in time from ``1 - t_min`` to ``t_min`` on a uniform
grid.  One Euler-Maruyama step of size ``dt > 0`` is

    x_next = x - drift(x, t) * dt + g(t) * sqrt(dt) * z,     z ~ N(0, I)

so the one-step conditional is Gaussian with mean ``x - drift * dt`` and
isotropic variance ``g^2 * dt``.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, ContractError, DomainError, ShapeError, SingularityError
from .nn import MlpModel, mlp_forward
from .schedules import Paradigm, schedule_coeffs, sde_from_schedule


class PredictionKind(str, Enum):
    EPSILON = "epsilon"
    SCORE = "score"
    VELOCITY = "velocity"


DEFAULT_KIND = {
    Paradigm.VP: PredictionKind.EPSILON,
    Paradigm.VE: PredictionKind.SCORE,
    Paradigm.RF: PredictionKind.VELOCITY,
}


def default_kind(schedule):
    return DEFAULT_KIND[schedule.paradigm]


def check_pairing(kind, schedule):
    kind = PredictionKind(kind)
    if DEFAULT_KIND[schedule.paradigm] is not kind:
        raise ConfigError(
            f"prediction kind {kind.value!r} does not pair with the {schedule.paradigm.value} schedule"
        )
    return kind


@dataclass(frozen=True)
class GaussianStep:
    mean: np.ndarray
    variance_scale: float


def _col(v, like):
    """Reshape per-row coefficients so they broadcast against ``like``."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0 or np.ndim(like) <= 1:
        return v
    return v.reshape(v.shape + (1,) * (np.ndim(like) - v.ndim))


def _in_window(schedule, t):
    t = np.asarray(t, dtype=np.float64)
    lo, hi = schedule.t_min, 1.0 - schedule.t_min
    # tolerate float round-off from grids built by linspace
    if np.any(t < lo - 1e-12) or np.any(t > hi + 1e-12):
        raise DomainError(f"time must lie in [{lo}, {hi}], got {t}")


def perturb(x0, eps, t, schedule):
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ShapeError(f"x0 {x0.shape} and eps {eps.shape} differ in shape")
    alpha, sigma, _, _ = schedule_coeffs(schedule, t)
    return _col(alpha, x0) * x0 + _col(sigma, x0) * eps


def target_value(kind, x0, eps, t, schedule):
    """Regression target: ``eps``, the conditional score, or ``eps - x0``."""
    kind = PredictionKind(kind)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if kind is PredictionKind.EPSILON:
        return eps.copy()
    if kind is PredictionKind.VELOCITY:
        if x0.shape != eps.shape:
            raise ShapeError(f"x0 {x0.shape} and eps {eps.shape} differ in shape")
        return eps - x0
    sigma = np.asarray(schedule_coeffs(schedule, t)[1])
    if np.any(sigma <= 0):
        raise SingularityError("score target needs sigma(t) > 0")
    return -eps / _col(sigma, eps)


def score_from_velocity_rf(x, t, v, t_min=1e-3):
    """Marginal score of rectified flow expressed through its velocity field."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < t_min) or np.any(t > 1.0):
        raise SingularityError(f"t must lie in [{t_min}, 1], got {t}")
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    tc = _col(t, x)
    return -x / tc - ((1.0 - tc) / tc) * v


def velocity_from_score(x, t, score, schedule):
    alpha, sigma, alpha_dot, sigma_dot = schedule_coeffs(schedule, t)
    if np.any(np.asarray(alpha) <= 0):
        raise SingularityError("velocity_from_score needs alpha(t) > 0")
    x = np.asarray(x, dtype=np.float64)
    score = np.asarray(score, dtype=np.float64)
    alpha, sigma, alpha_dot, sigma_dot = (_col(v, x) for v in (alpha, sigma, alpha_dot, sigma_dot))
    ratio = alpha_dot / alpha
    return ratio * x - sigma * (sigma_dot - ratio * sigma) * score


def drift(x, t, prediction, kind, schedule, probability_flow=False):
    """Reverse-time drift for one network prediction.

    Score:    f x - g^2 s                     (f x - g^2 s / 2 on the probability-flow ODE)
    Epsilon:  the score branch with s = -eps_hat / sigma
    Velocity: v + g^2 / (2t) (x + (1 - t) v)  with g the sampling amplitude
              (plain v on the ODE)
    """
    kind = check_pairing(kind, schedule)
    _in_window(schedule, t)
    x = np.asarray(x, dtype=np.float64)
    pred = np.asarray(prediction, dtype=np.float64)
    if x.shape != pred.shape:
        raise ShapeError(f"x {x.shape} and prediction {pred.shape} differ in shape")
    if kind is PredictionKind.VELOCITY:
        if probability_flow:
            return pred.copy()
        g2 = _col(np.asarray(schedule.sampling_g(t)) ** 2, x)
        tc = _col(t, x)
        return pred + g2 / (2.0 * tc) * (x + (1.0 - tc) * pred)
    if kind is PredictionKind.EPSILON:
        sigma = _col(schedule_coeffs(schedule, t)[1], x)
        pred = -pred / sigma
    f, g2 = sde_from_schedule(schedule, t)
    f, g2 = _col(f, x), _col(g2, x)
    return f * x - (0.5 if probability_flow else 1.0) * g2 * pred


def euler_maruyama_step(x, t, dt, drift, g, noise):
    """Advance one reverse-time step; ``t`` is informational only."""
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=np.float64)
    mean = x - np.asarray(drift, dtype=np.float64) * dt
    g = np.asarray(g, dtype=np.float64)
    x_next = mean + _col(g, x) * np.sqrt(dt) * np.asarray(noise, dtype=np.float64)
    var = g * g * dt
    return x_next, GaussianStep(mean, float(var) if var.ndim == 0 else var)


def step_rng(seed, index):
    """Independent generator for stream ``index`` of run ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(index)]))


def _predictor(model):
    if isinstance(model, MlpModel):
        return lambda x, t, c: mlp_forward(model, x, t, c)
    if callable(model):
        return model
    raise ContractError("model must be an MlpModel or a callable(x, t, c)")


def sample(model, schedule, kind, c=None, steps=50, mode="ode", seed=0, n=None, data_dim=None):
    """Generate samples by integrating from ``t = 1 - t_min`` down to ``t_min``.

    ``model`` is an ``MlpModel`` or any callable ``(x, t, c) -> prediction``.
    With ``n=None`` a single sample of shape ``(data_dim,)`` is returned,
    otherwise an ``(n, data_dim)`` batch.  Streams are keyed on ``seed``: the
    initial draw uses stream 0 and step ``k`` uses stream ``k + 1``.

    The initial state is standard normal for RF and VP and
    ``N(0, sigma(1 - t_min)^2 I)`` for VE.
    """
    if steps <= 0:
        raise DomainError("steps must be a positive integer")
    mode = str(mode).lower()
    if mode not in ("ode", "sde"):
        raise ConfigError(f"mode must be 'ode' or 'sde', got {mode!r}")
    kind = check_pairing(kind, schedule)
    if data_dim is None:
        if not isinstance(model, MlpModel):
            raise ContractError("data_dim is required for callable models")
        data_dim = model.data_dim
    predict = _predictor(model)
    rows = 1 if n is None else int(n)
    t_hi, t_lo = 1.0 - schedule.t_min, schedule.t_min
    ts = np.linspace(t_hi, t_lo, steps + 1)
    x = step_rng(seed, 0).standard_normal((rows, data_dim))
    if schedule.paradigm is Paradigm.VE:
        x *= schedule.sigma(t_hi)
    cond = None if c is None else np.broadcast_to(np.asarray(c, dtype=np.float64), (rows, np.size(c)))
    ode = mode == "ode"
    for k in range(steps):
        t, dt = ts[k], ts[k] - ts[k + 1]
        pred = predict(x, t, cond)
        d = drift(x, t, pred, kind, schedule, probability_flow=ode)
        g = 0.0 if ode else schedule.sampling_g(t)
        noise = np.zeros_like(x) if ode else step_rng(seed, k + 1).standard_normal(x.shape)
        x, _ = euler_maruyama_step(x, t, dt, d, g, noise)
    return x[0] if n is None else x


def gaussian_kl_same_cov(mu_a, mu_b, variance_scale):
    """KL(N(mu_a, s I) || N(mu_b, s I)) = |mu_a - mu_b|^2 / (2 s)."""
    if not variance_scale > 0:
        raise DomainError(f"variance_scale must be positive, got {variance_scale}")
    diff = np.asarray(mu_a, dtype=np.float64) - np.asarray(mu_b, dtype=np.float64)
    return float(np.sum(diff * diff)) / (2.0 * variance_scale)
