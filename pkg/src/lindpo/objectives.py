"""Preference objectives for regression-trained generative models.

For a pair ``(x0_w, x0_l, c)``, a shared time ``t`` and noises ``eps_w, eps_l``
the per-sample regression gap of the policy over the reference is

    D(x_t) = |y - y_policy(x_t)|^2 - |y - y_ref(x_t)|^2

and the preference margin is ``delta = D(x_t^w) - D(x_t^l)``.  Negative margins
mean the policy fits the winner better (relative to the reference) than it
fits the loser.

Two losses are built on the margin:

* the sigmoid DPO loss ``softplus(beta_bar * lambda(t) * delta)``, whose
  gradient is ``beta_bar sigmoid(beta_bar delta) * grad(|y^w - y_policy|^2 - |y^l - y_policy|^2)``;
* the linear-utility loss ``sg(w(delta)) * (|y^w - y_policy|^2 - |y^l - y_policy|^2)``
  with ``w = clip(0.2 * beta_bar * delta + 0.5, eta, 1)`` held constant under
  differentiation.
"""

from collections import namedtuple
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .autodiff import Tensor, sigmoid, softplus
from .dynamics import PredictionKind, check_pairing, perturb, target_value
from .errors import ConfigError, ContractError, DomainError, ShapeError
from .nn import forward, mlp_forward
from .schedules import Paradigm, schedule_coeffs, sde_from_schedule


class UtilityKind(str, Enum):
    SIGMOID = "sigmoid"
    KT = "kt"
    LOSS_AVERSE = "loss_averse"
    RISK_SEEKING = "risk_seeking"
    LINEAR = "linear"


class LambdaMode(str, Enum):
    CONSTANT = "constant"
    EXACT = "exact"


@dataclass(frozen=True)
class UtilitySpec:
    kind: UtilityKind = UtilityKind.LINEAR
    slope: float = 0.2
    intercept: float = 0.5
    floor_eta: float = 1e-2
    ceil: float = 1.0
    norm_window: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "kind", UtilityKind(self.kind))
        if not 0.0 <= self.floor_eta < self.ceil:
            raise ConfigError(f"eta must satisfy 0 <= eta < {self.ceil}, got {self.floor_eta}")
        if self.kind is UtilityKind.LINEAR and self.slope <= 0:
            raise ConfigError("linear utility slope must be positive")
        if self.norm_window <= 0:
            raise ConfigError("norm_window must be positive")


@dataclass(frozen=True)
class DpoConfig:
    beta_bar: float = 250.0
    lambda_mode: LambdaMode = LambdaMode.CONSTANT
    kind: PredictionKind = PredictionKind.VELOCITY
    utility: UtilitySpec = field(default_factory=UtilitySpec)
    gamma_ema: float = 0.995
    T_steps: int = 1000
    shared_noise: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lambda_mode", LambdaMode(self.lambda_mode))
        object.__setattr__(self, "kind", PredictionKind(self.kind))
        if not self.beta_bar > 0:
            raise ConfigError(f"beta_bar must be positive, got {self.beta_bar}")
        if not 0.0 <= self.gamma_ema <= 1.0:
            raise ConfigError(f"gamma_ema must lie in [0, 1], got {self.gamma_ema}")
        if self.T_steps <= 0:
            raise ConfigError("T_steps must be positive")


@dataclass(frozen=True)
class PreferencePair:
    x0_w: np.ndarray
    x0_l: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        for name in ("x0_w", "x0_l", "c"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).ravel())
        if self.x0_w.shape != self.x0_l.shape:
            raise ShapeError("winner and loser must have the same dimension")
        if not all(np.all(np.isfinite(getattr(self, n))) for n in ("x0_w", "x0_l", "c")):
            raise ContractError("preference pair contains non-finite values")


PairBatch = namedtuple("PairBatch", "x0_w x0_l c")
NoiseDraws = namedtuple("NoiseDraws", "t eps_w eps_l")


def stack_pairs(pairs):
    if isinstance(pairs, PairBatch):
        return pairs
    pairs = list(pairs)
    if not pairs:
        raise ContractError("batch must be nonempty")
    return PairBatch(
        np.stack([p.x0_w for p in pairs]),
        np.stack([p.x0_l for p in pairs]),
        np.stack([p.c for p in pairs]),
    )


def draw_noise(rng, n, dim, schedule, shared_noise=False):
    """One ``t`` per pair, uniform on ``[t_min, 1 - t_min]``, and Gaussian noises."""
    t = rng.uniform(schedule.t_min, 1.0 - schedule.t_min, size=n)
    eps_w = rng.standard_normal((n, dim))
    eps_l = eps_w.copy() if shared_noise else rng.standard_normal((n, dim))
    return NoiseDraws(t, eps_w, eps_l)


# -- margins ------------------------------------------------------------------

Margins = namedtuple("Margins", "err_w err_l ref_w ref_l delta")


def _sq_err(y, pred):
    """Row-wise squared error; ``pred`` may be a Tensor."""
    d = pred - y
    if isinstance(d, Tensor):
        return d.square().sum(axis=-1)
    return np.sum(d * d, axis=-1)


def margins(policy, ref, batch, draws, kind, schedule, theta=None):
    """Policy errors (on the tape), reference errors and the margins per pair.

    The reference is evaluated on a detached parameter snapshot.
    """
    x0_w, x0_l, c = batch
    t, eps_w, eps_l = draws
    xt_w = perturb(x0_w, eps_w, t, schedule)
    xt_l = perturb(x0_l, eps_l, t, schedule)
    y_w = target_value(kind, x0_w, eps_w, t, schedule)
    y_l = target_value(kind, x0_l, eps_l, t, schedule)
    err_w = _sq_err(y_w, forward(policy, xt_w, t, c, theta))
    err_l = _sq_err(y_l, forward(policy, xt_l, t, c, theta))
    ref_w = _sq_err(y_w, mlp_forward(ref, xt_w, t, c))
    ref_l = _sq_err(y_l, mlp_forward(ref, xt_l, t, c))
    delta = (err_w.value - ref_w) - (err_l.value - ref_l)
    return Margins(err_w, err_l, ref_w, ref_l, delta)


def delta_d(policy, ref, pair, t, eps_w, eps_l, kind, schedule):
    """Margin for a single pair: ``(delta, residual_w, residual_l)``."""
    batch = stack_pairs([pair])
    draws = NoiseDraws(np.array([t], dtype=np.float64), np.atleast_2d(eps_w), np.atleast_2d(eps_l))
    m = margins(policy, ref, batch, draws, kind, schedule)
    res_w = float(m.err_w.value[0] - m.ref_w[0])
    res_l = float(m.err_l.value[0] - m.ref_l[0])
    return res_w - res_l, res_w, res_l


# -- weights and utilities -----------------------------------------------------


def dpo_sigmoid_loss(delta, beta_bar):
    """-log sigmoid(-beta_bar * delta), evaluated as softplus."""
    out = softplus(beta_bar * np.asarray(delta, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


def dpo_gradient_weight(delta, beta_bar):
    out = beta_bar * sigmoid(beta_bar * np.asarray(delta, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


def utility(spec, x):
    """Raw utility value (no normalization, no clipping)."""
    x = np.asarray(x, dtype=np.float64)
    k = spec.kind
    if k is UtilityKind.LINEAR:
        out = spec.slope * x + spec.intercept
    elif k in (UtilityKind.SIGMOID, UtilityKind.KT):
        out = sigmoid(x)
    elif k is UtilityKind.LOSS_AVERSE:
        out = -softplus(-x)
    else:
        out = softplus(x)
    return float(out) if out.ndim == 0 else out


def normalize_utility(spec, x):
    """``(U(x) - U(-w)) / (U(w) - U(-w))`` clipped to ``[0, 1]``."""
    w = spec.norm_window
    x = np.asarray(x, dtype=np.float64)
    if spec.kind in (UtilityKind.SIGMOID, UtilityKind.KT):
        # sigmoid(x) = (1 + tanh(x/2)) / 2; this form is exact at 0 and +-w
        half = np.tanh(0.5 * w)
        out = np.clip((np.tanh(0.5 * x) + half) / (2.0 * half), 0.0, 1.0)
        return float(out) if out.ndim == 0 else out
    lo, hi = utility(spec, -w), utility(spec, w)
    if not hi != lo:
        raise DomainError("utility is flat over the normalization window")
    out = np.clip((np.asarray(utility(spec, x)) - lo) / (hi - lo), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def linear_dpo_weight(delta, cfg):
    u = cfg.utility
    raw = u.slope * cfg.beta_bar * np.asarray(delta, dtype=np.float64) + u.intercept
    out = np.clip(raw, u.floor_eta, u.ceil)
    return float(out) if out.ndim == 0 else out


def utility_weight(cfg, delta, lam=1.0):
    """Gradient weight applied to the winner-minus-loser regression gap.

    Linear: ``clip(u_linear(beta delta), eta, 1)``; Sigmoid: ``sigmoid(beta delta)``;
    KT, loss-averse and risk-seeking: the normalized utility of ``beta delta``.
    ``beta`` here is ``beta_bar * lam``.
    """
    x = cfg.beta_bar * np.asarray(lam) * np.asarray(delta, dtype=np.float64)
    k = cfg.utility.kind
    if k is UtilityKind.LINEAR:
        return np.clip(utility(cfg.utility, x), cfg.utility.floor_eta, cfg.utility.ceil)
    if k is UtilityKind.SIGMOID:
        return sigmoid(x)
    return np.asarray(normalize_utility(cfg.utility, x))


def lambda_weight(paradigm, t, schedule, lambda_mode=LambdaMode.CONSTANT):
    """Per-time weight folded into beta_bar by the exact derivations."""
    lambda_mode = LambdaMode(lambda_mode)
    paradigm = Paradigm(paradigm)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < schedule.t_min - 1e-12) or np.any(t > 1.0 - schedule.t_min + 1e-12):
        raise DomainError(f"t must lie in [t_min, 1 - t_min], got {t}")
    if lambda_mode is LambdaMode.CONSTANT:
        out = np.ones_like(t)
    elif paradigm is Paradigm.RF:
        g2 = np.asarray(schedule.sampling_g(t)) ** 2
        if np.any(g2 <= 0):
            raise DomainError("exact RF weighting needs a positive sampling amplitude")
        out = (1.0 + g2 * (1.0 - t) / (2.0 * t)) ** 2 / (2.0 * g2)
    elif paradigm is Paradigm.VE:
        out = 0.5 * np.asarray(sde_from_schedule(schedule, t)[1])
    else:
        sigma = np.asarray(schedule_coeffs(schedule, t)[1])
        out = np.asarray(sde_from_schedule(schedule, t)[1]) / (2.0 * sigma**2)
    return float(out) if out.ndim == 0 else out


# -- losses ----------------------------------------------------------------------


def _lam(cfg, schedule, t):
    return lambda_weight(schedule.paradigm, t, schedule, cfg.lambda_mode)


def _finish(loss, theta):
    return loss if theta is not None else float(loss.value)


def _check_kind(cfg, schedule):
    return check_pairing(cfg.kind, schedule)


def dpo_unified_terms(policy, ref, batch, cfg, schedule, draws, theta=None):
    """Sigmoid DPO loss as a tape scalar plus its margins and gradient weights."""
    kind = _check_kind(cfg, schedule)
    batch = stack_pairs(batch)
    m = margins(policy, ref, batch, draws, kind, schedule, theta)
    lam = np.asarray(_lam(cfg, schedule, draws.t))
    beta = cfg.beta_bar * lam
    z = ((m.err_w - m.ref_w) - (m.err_l - m.ref_l)) * beta
    loss = z.softplus().mean()
    return loss, m, np.asarray(dpo_gradient_weight(m.delta, beta))


def dpo_unified_loss(policy, ref, batch, cfg, schedule, draws, theta=None):
    """Mean of ``-log sigmoid(-beta_bar lambda(t) delta)`` over the batch."""
    return _finish(dpo_unified_terms(policy, ref, batch, cfg, schedule, draws, theta)[0], theta)


def linear_dpo_terms(policy, ref, batch, cfg, schedule, draws, theta=None):
    kind = _check_kind(cfg, schedule)
    batch = stack_pairs(batch)
    m = margins(policy, ref, batch, draws, kind, schedule, theta)
    lam = np.asarray(_lam(cfg, schedule, draws.t))
    # weight is a plain array: no path back to theta
    weights = np.asarray(utility_weight(cfg, m.delta, lam), dtype=np.float64)
    loss = ((m.err_w - m.err_l) * weights).mean()
    return loss, m, weights


def linear_dpo_loss(policy, ref, batch, cfg, schedule, draws, theta=None):
    """Mean of ``sg(w(delta)) * (|y^w - y_policy|^2 - |y^l - y_policy|^2)``."""
    return _finish(linear_dpo_terms(policy, ref, batch, cfg, schedule, draws, theta)[0], theta)


def sft_loss(policy, x0, c, kind, schedule, draws, theta=None):
    """Mean squared regression error on clean samples ``x0`` (winners only).

    ``draws`` supplies ``t`` and the noise; only ``draws.eps_w`` is used.
    """
    kind = check_pairing(kind, schedule)
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    if x0.shape[0] == 0:
        raise ContractError("batch must be nonempty")
    t, eps = draws.t, draws.eps_w
    xt = perturb(x0, eps, t, schedule)
    y = target_value(kind, x0, eps, t, schedule)
    return _finish(_sq_err(y, forward(policy, xt, t, c, theta)).mean(), theta)


def implicit_accuracy(deltas):
    """Fraction of margins below zero; exact ties count one half."""
    d = np.asarray(deltas, dtype=np.float64).ravel()
    if d.size == 0:
        raise ContractError("need at least one margin")
    return float((np.sum(d < 0) + 0.5 * np.sum(d == 0)) / d.size)
