"""Flat run configuration: one JSON object merging schedule, objective, model,
optimizer and toy-task settings.

Every key is validated before any work starts and unknown keys are rejected.
"""

import json
import math
from pathlib import Path

from .data_io import Mode, ToyTaskSpec, parse_modes
from .errors import ConfigError
from .objectives import DpoConfig, LambdaMode, UtilityKind, UtilitySpec
from .schedules import make_schedule
from .training import METHODS, TrainConfig
from .dynamics import DEFAULT_KIND

# learning rate used at image-model scale; only applied with paper_hparams
PAPER_LR = 5e-6

DEFAULTS = {
    "schedule": "rf",
    "sampling_g_scale": 1.0,
    "t_min": 1e-3,
    "ve_sigma_max": 1.0,
    "ve_power": 0.5,
    "method": "linear-dpo",
    "beta_bar": 250.0,
    "lambda_mode": "constant",
    "utility": "linear",
    "eta": 1e-2,
    "gamma": 0.995,
    "T_steps": 1000,
    "shared_noise": False,
    "hidden": [64, 64],
    "activation": "silu",
    "lr": 1e-3,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps_opt": 1e-8,
    "weight_decay": 1e-4,
    "warmup_steps": 200,
    "batch_size": 64,
    "seed": 0,
    "eval_every": 100,
    "eval_pairs": 512,
    "eval_draws": 16,
    "eval_samples": 2000,
    "eval_sample_steps": 50,
    "modes": "2,0,0.3,1;-2,0,0.3,0",
    "pairs": 4096,
    "label_flip_prob": 0.0,
    "distinct_modes": True,
    "pretrain_steps": 0,
    "pretrain_lr": 2e-3,
    "data": None,
    "init_ckpt": None,
    "paper_hparams": False,
}

_FLOAT = {
    "sampling_g_scale", "t_min", "ve_sigma_max", "ve_power", "beta_bar", "eta", "gamma",
    "lr", "beta1", "beta2", "eps_opt", "weight_decay", "label_flip_prob", "pretrain_lr",
}
_INT = {
    "T_steps", "warmup_steps", "batch_size", "seed", "eval_every", "eval_pairs",
    "eval_draws", "eval_samples", "eval_sample_steps", "pairs", "pretrain_steps",
}
_BOOL = {"shared_noise", "distinct_modes", "paper_hparams"}
_PATH = {"data", "init_ckpt"}
_CHOICES = {
    "schedule": ("vp", "ve", "rf"),
    "method": METHODS,
    "lambda_mode": tuple(m.value for m in LambdaMode),
    "utility": tuple(u.value for u in UtilityKind),
    "activation": ("tanh", "silu"),
}


def _coerce(key, value):
    if key in _BOOL:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if key in _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if key in _FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{key} must be a finite number, got {value!r}")
        return float(value)
    if key in _CHOICES:
        if value not in _CHOICES[key]:
            raise ConfigError(f"{key} must be one of {list(_CHOICES[key])}, got {value!r}")
        return value
    if key in _PATH:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{key} must be a path string or null")
        return value
    if key == "hidden":
        if not isinstance(value, list) or not value or not all(
            isinstance(h, int) and not isinstance(h, bool) and h > 0 for h in value
        ):
            raise ConfigError(f"hidden must be a nonempty list of positive integers, got {value!r}")
        return list(value)
    if key == "modes":
        if not isinstance(value, str):
            raise ConfigError("modes must be a string like '2,0,0.3,1;-2,0,0.3,0'")
        # checks the preferred / non-preferred split and the stds
        ToyTaskSpec(modes=parse_modes(value), cond_dim=0, pairs=0)
        return value
    raise ConfigError(f"unknown config key {key!r}")


def validate_config(doc, base=None):
    """Merge ``doc`` over ``base`` (default: ``DEFAULTS``) and check every value.

    Returns a new dict.  Raises ``ConfigError`` on unknown keys, wrong types
    or out-of-range values.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    merged = dict(DEFAULTS if base is None else base)
    explicit_lr = "lr" in doc
    for key, value in doc.items():
        merged[key] = _coerce(key, value)
    if merged["paper_hparams"] and not explicit_lr:
        merged["lr"] = PAPER_LR
    _check_ranges(merged)
    return merged


def _check_ranges(c):
    if not c["beta_bar"] > 0:
        raise ConfigError(f"beta_bar must be positive, got {c['beta_bar']}")
    if not 0.0 <= c["eta"] < 1.0:
        raise ConfigError(f"eta must satisfy 0 <= eta < 1, got {c['eta']}")
    if not 0.0 <= c["gamma"] <= 1.0:
        raise ConfigError(f"gamma must lie in [0, 1], got {c['gamma']}")
    if not 0.0 < c["t_min"] < 0.5:
        raise ConfigError(f"t_min must lie in (0, 0.5), got {c['t_min']}")
    if not 0.0 <= c["beta1"] < 1.0 or not 0.0 <= c["beta2"] < 1.0:
        raise ConfigError("beta1 and beta2 must lie in [0, 1)")
    if c["lr"] < 0 or c["weight_decay"] < 0 or not c["eps_opt"] > 0:
        raise ConfigError("lr and weight_decay must be non-negative and eps_opt positive")
    if not 0.0 <= c["label_flip_prob"] <= 1.0:
        raise ConfigError("label_flip_prob must lie in [0, 1]")
    for key in ("batch_size", "eval_every", "eval_pairs", "eval_draws", "eval_sample_steps", "T_steps"):
        if c[key] <= 0:
            raise ConfigError(f"{key} must be positive, got {c[key]}")
    if c["pretrain_lr"] < 0:
        raise ConfigError("pretrain_lr must be non-negative")
    for key in ("warmup_steps", "eval_samples", "pairs", "pretrain_steps"):
        if c[key] < 0:
            raise ConfigError(f"{key} must be non-negative, got {c[key]}")
    if c["sampling_g_scale"] < 0 or not c["ve_sigma_max"] > 0 or not c["ve_power"] > 0:
        raise ConfigError("sampling_g_scale must be >= 0; ve_sigma_max and ve_power must be positive")


def load_config(path, overrides=None):
    """Read a JSON config file (or start from defaults when ``path`` is None)."""
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if overrides:
        doc = {**doc, **overrides}
    return validate_config(doc)


def build_schedule(c):
    return make_schedule(
        c["schedule"],
        sampling_g_scale=c["sampling_g_scale"],
        t_min=c["t_min"],
        ve_sigma_max=c["ve_sigma_max"],
        ve_power=c["ve_power"],
    )


def build_dpo(c, schedule):
    return DpoConfig(
        beta_bar=c["beta_bar"],
        lambda_mode=c["lambda_mode"],
        kind=DEFAULT_KIND[schedule.paradigm],
        utility=UtilitySpec(kind=c["utility"], floor_eta=c["eta"]),
        gamma_ema=c["gamma"],
        T_steps=c["T_steps"],
        shared_noise=c["shared_noise"],
    )


def build_train_config(c):
    schedule = build_schedule(c)
    return TrainConfig(
        method=c["method"],
        schedule=schedule,
        dpo=build_dpo(c, schedule),
        hidden=tuple(c["hidden"]),
        activation=c["activation"],
        lr=c["lr"],
        beta1=c["beta1"],
        beta2=c["beta2"],
        eps_opt=c["eps_opt"],
        weight_decay=c["weight_decay"],
        warmup_steps=c["warmup_steps"],
        batch_size=c["batch_size"],
        seed=c["seed"],
        eval_pairs=c["eval_pairs"],
        eval_draws=c["eval_draws"],
        eval_samples=c["eval_samples"],
        eval_sample_steps=c["eval_sample_steps"],
    )


def build_task(c):
    modes = parse_modes(c["modes"])
    return ToyTaskSpec(
        modes=modes,
        cond_dim=len(modes),
        pairs=c["pairs"],
        seed=c["seed"],
        label_flip_prob=c["label_flip_prob"],
        distinct_modes=c["distinct_modes"],
    )


def task_from_modes(modes, pairs=0, seed=0, **kw):
    """Toy task whose condition width equals its number of modes."""
    modes = parse_modes(modes) if isinstance(modes, str) else tuple(
        m if isinstance(m, Mode) else Mode(*m) for m in modes
    )
    return ToyTaskSpec(modes=modes, cond_dim=len(modes), pairs=pairs, seed=seed, **kw)
