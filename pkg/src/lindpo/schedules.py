"""Noise schedules for VP/VE diffusion and rectified flow.

Every schedule interpolates clean data and Gaussian noise as

    x_t = alpha(t) * x0 + sigma(t) * eps,      t in [0, 1]

with alpha(0) = 1 and sigma(0) = 0.  The matching forward SDE
dx = f(t) x dt + g(t) dw has

    f   = alpha_dot / alpha
    g^2 = d(sigma^2)/dt - 2 f sigma^2

Concrete choices:

    VP   alpha = exp(-t),  sigma^2 = 1 - exp(-2t)      (f = -1, g^2 = 2)
    VE   alpha = 1,        sigma = sigma_max * t**p    (p = 1/2 gives g^2 = sigma_max^2)
    RF   alpha = 1 - t,    sigma = t

Rectified flow is deterministic, so the diffusion amplitude used when sampling
it with an SDE is a free choice; here it is g(t) = a * sqrt(t), which keeps
g^2 / (2t) = a^2 / 2 finite at t -> 0.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, DomainError, SingularityError


class Paradigm(str, Enum):
    VP = "vp"
    VE = "ve"
    RF = "rf"


@dataclass(frozen=True)
class Schedule:
    paradigm: Paradigm
    sampling_g_scale: float = 1.0
    t_min: float = 1e-3
    ve_sigma_max: float = 1.0
    ve_power: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "paradigm", Paradigm(self.paradigm))
        if not 0.0 < self.t_min < 0.5:
            raise ConfigError(f"t_min must lie in (0, 0.5), got {self.t_min}")
        if self.sampling_g_scale < 0:
            raise ConfigError("sampling_g_scale must be non-negative")
        if self.ve_sigma_max <= 0 or self.ve_power <= 0:
            raise ConfigError("VE schedule needs sigma_max > 0 and power > 0")

    def clamp(self, t):
        return np.clip(t, self.t_min, 1.0 - self.t_min)

    def alpha(self, t):
        return schedule_coeffs(self, t)[0]

    def sigma(self, t):
        return schedule_coeffs(self, t)[1]

    def sampling_g(self, t):
        """Diffusion amplitude of the sampling SDE at time ``t``."""
        t = _check_time(t)
        if self.paradigm is Paradigm.RF:
            return self.sampling_g_scale * np.sqrt(t)
        _, g2 = _fg(self, t)
        return np.sqrt(np.maximum(g2, 0.0))


def make_schedule(name="rf", sampling_g_scale=1.0, t_min=1e-3, **kwargs):
    try:
        paradigm = Paradigm(str(name).lower())
    except ValueError:
        raise ConfigError(f"unknown schedule {name!r}; expected vp, ve or rf") from None
    return Schedule(paradigm, sampling_g_scale=sampling_g_scale, t_min=t_min, **kwargs)


def _check_time(t):
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise DomainError(f"time must lie in [0, 1], got {t}")
    return t if t.ndim else float(t)


def schedule_coeffs(schedule, t):
    """Return ``(alpha, sigma, alpha_dot, sigma_dot)`` at time ``t``.

    ``t`` may be a scalar or an array; the result broadcasts accordingly.
    ``sigma_dot`` is ``inf`` where sigma has an infinite slope (VP and
    sub-linear VE at ``t = 0``).
    """
    t = _check_time(t)
    p = schedule.paradigm
    with np.errstate(divide="ignore", invalid="ignore"):
        if p is Paradigm.RF:
            alpha = 1.0 - t
            sigma = t
            alpha_dot = -np.ones_like(t)
            sigma_dot = np.ones_like(t)
        elif p is Paradigm.VP:
            alpha = np.exp(-t)
            sigma = np.sqrt(-np.expm1(-2.0 * t))
            alpha_dot = -alpha
            sigma_dot = np.where(sigma > 0, np.exp(-2.0 * t) / np.where(sigma > 0, sigma, 1.0), np.inf)
        else:
            smax, pw = schedule.ve_sigma_max, schedule.ve_power
            alpha = np.ones_like(t)
            sigma = smax * np.power(t, pw)
            alpha_dot = np.zeros_like(t)
            if pw >= 1.0:
                sigma_dot = smax * pw * np.power(t, pw - 1.0)
            else:
                sigma_dot = np.where(t > 0, smax * pw * np.power(np.where(t > 0, t, 1.0), pw - 1.0), np.inf)
    out = tuple(np.asarray(v, dtype=np.float64) for v in (alpha, sigma, alpha_dot, sigma_dot))
    if np.ndim(t) == 0:
        return tuple(float(v) for v in out)
    return out


def _sigma2_dot(schedule, t):
    p = schedule.paradigm
    if p is Paradigm.RF:
        return 2.0 * t
    if p is Paradigm.VP:
        return 2.0 * np.exp(-2.0 * t)
    smax, pw = schedule.ve_sigma_max, schedule.ve_power
    return smax**2 * 2.0 * pw * np.power(t, 2.0 * pw - 1.0)


def _fg(schedule, t):
    alpha, sigma, alpha_dot, _ = schedule_coeffs(schedule, t)
    if np.any(np.asarray(alpha) <= 0.0):
        raise SingularityError(f"alpha vanishes at t={t}; f = alpha_dot/alpha is undefined")
    f = np.asarray(alpha_dot) / np.asarray(alpha)
    with np.errstate(divide="ignore", invalid="ignore"):
        g2 = _sigma2_dot(schedule, np.asarray(t, dtype=np.float64)) - 2.0 * f * np.asarray(sigma) ** 2
    if np.ndim(t) == 0:
        return float(f), float(g2)
    return f, g2


def sde_from_schedule(schedule, t):
    """Forward-SDE coefficients ``(f, g_squared)`` implied by the schedule at ``t``.

    For rectified flow these describe the forward interpolation only; sample
    with ``schedule.sampling_g`` instead.
    """
    t = _check_time(t)
    return _fg(schedule, t)
