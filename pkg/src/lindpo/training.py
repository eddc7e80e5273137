"""Preference training with an EMA reference, plus the SFT and sigmoid-DPO baselines.

One step of ``linear-dpo`` (and of ``dpo``) does, in order:

1. draw a batch of pairs, one time per pair and independent noises;
2. evaluate the policy on the tape and the reference on a detached snapshot;
3. form the loss and take one AdamW step on the policy;
4. move the reference towards the updated policy,
   ``ref <- gamma * ref + (1 - gamma) * policy``.

Randomness for step ``k`` comes from a generator keyed on ``(seed, k)`` so a
run resumed from a checkpoint replays the uninterrupted run exactly.
"""

import logging
import math
from collections import namedtuple
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import objectives as obj
from .autodiff import Tensor
from .data_io import MetricsWriter, pref_mass, read_json, write_json
from .dynamics import default_kind, sample
from .errors import ConfigError, ContractError, TrainingAborted
from .nn import (
    OptimizerState,
    mlp_init,
    model_from_dict,
    model_to_dict,
    optimizer_from_dict,
    optimizer_step,
    optimizer_to_dict,
    TIME_FEATURES,
)
from .schedules import make_schedule

log = logging.getLogger(__name__)

METHODS = ("linear-dpo", "dpo", "sft")
CHECKPOINT_SCHEMA = 1

# stream tags for step_rng-style seeding
_BATCH, _NOISE, _EVAL, _INIT = 1, 2, 3, 4


@dataclass(frozen=True)
class TrainConfig:
    method: str = "linear-dpo"
    schedule: object = field(default_factory=lambda: make_schedule("rf"))
    dpo: obj.DpoConfig = field(default_factory=obj.DpoConfig)
    hidden: tuple = (64, 64)
    activation: str = "silu"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    weight_decay: float = 1e-4
    warmup_steps: int = 200
    batch_size: int = 64
    seed: int = 0
    eval_pairs: int = 512
    eval_draws: int = 16
    eval_samples: int = 2000
    eval_sample_steps: int = 50

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.eval_draws <= 0:
            raise ConfigError("eval_draws must be positive")
        if self.lr < 0 or self.warmup_steps < 0:
            raise ConfigError("lr and warmup_steps must be non-negative")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        obj.check_pairing(self.dpo.kind, self.schedule)

    def layer_dims(self, data_dim, cond_dim):
        return (data_dim + TIME_FEATURES + cond_dim, *self.hidden, data_dim)

    def new_optimizer(self, params):
        return OptimizerState.zeros_like(
            params,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps_opt=self.eps_opt,
            weight_decay=self.weight_decay,
            warmup_steps=self.warmup_steps,
        )


@dataclass
class TrainState:
    step: int
    policy: object
    ref: object
    optimizer: OptimizerState
    rng_seed: int
    cfg: TrainConfig

    def __post_init__(self):
        if self.policy.layer_dims != self.ref.layer_dims or self.policy.activation != self.ref.activation:
            raise ContractError("policy and reference must share one architecture")


MetricsRow = namedtuple("MetricsRow", "step loss implicit_acc mean_delta mean_weight pref_mass")
RunResult = namedtuple("RunResult", "state evals history")


def init_state(cfg, data_dim, cond_dim, init_model=None):
    """Policy and reference start from the same parameters."""
    if init_model is None:
        policy = mlp_init(cfg.layer_dims(data_dim, cond_dim), cfg.activation, seed=cfg.seed)
    else:
        policy = init_model.copy()
    return TrainState(0, policy, policy.copy(), cfg.new_optimizer(policy.params), cfg.seed, cfg)


def ema_update(ref, policy, gamma):
    """``gamma * ref + (1 - gamma) * policy``, elementwise."""
    if ref.layer_dims != policy.layer_dims:
        raise ContractError("EMA needs identical architectures")
    if not 0.0 <= gamma <= 1.0:
        raise ContractError(f"gamma must lie in [0, 1], got {gamma}")
    if gamma == 1.0:
        return ref.copy()
    return ref.with_params(gamma * ref.params + (1.0 - gamma) * policy.params)


def _rng(seed, tag, step):
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, tag, int(step)]))


def _loss_terms(state, batch, draws, theta):
    cfg = state.cfg
    if cfg.method == "linear-dpo":
        return obj.linear_dpo_terms(state.policy, state.ref, batch, cfg.dpo, cfg.schedule, draws, theta)
    if cfg.method == "dpo":
        return obj.dpo_unified_terms(state.policy, state.ref, batch, cfg.dpo, cfg.schedule, draws, theta)
    loss = obj.sft_loss(state.policy, batch.x0_w, batch.c, cfg.dpo.kind, cfg.schedule, draws, theta)
    m = obj.margins(state.policy, state.ref, batch, draws, cfg.dpo.kind, cfg.schedule)
    return loss, m, np.ones_like(m.delta)


def train_step(state, batch, draws=None):
    """One optimizer step followed by one EMA update.

    Metrics are taken from the margins computed before the update.
    ``draws`` defaults to the step's own noise stream.
    """
    cfg = state.cfg
    batch = obj.stack_pairs(batch)
    if draws is None:
        draws = obj.draw_noise(
            _rng(state.rng_seed, _NOISE, state.step),
            len(batch.x0_w),
            batch.x0_w.shape[1],
            cfg.schedule,
            cfg.dpo.shared_noise,
        )
    theta = Tensor(state.policy.params.copy(), requires_grad=True)
    loss, m, weights = _loss_terms(state, batch, draws, theta)
    if not math.isfinite(float(loss.value)):
        raise TrainingAborted(
            f"non-finite loss at step {state.step}: loss={loss.value}, "
            f"max|delta|={np.max(np.abs(m.delta))}, max|param|={np.max(np.abs(state.policy.params))}"
        )
    grad = np.zeros_like(theta.value)
    if loss.requires_grad:
        loss.backward()
        if theta.grad is not None:
            grad = theta.grad
    params, opt = optimizer_step(state.policy.params, grad, state.optimizer)
    policy = state.policy.with_params(params)
    ref = state.ref if cfg.method == "sft" else ema_update(state.ref, policy, cfg.dpo.gamma_ema)
    row = MetricsRow(
        state.step + 1,
        float(loss.value),
        obj.implicit_accuracy(m.delta),
        float(np.mean(m.delta)),
        float(np.mean(weights)),
        float("nan"),
    )
    return TrainState(state.step + 1, policy, ref, opt, state.rng_seed, cfg), row


def sample_batch(dataset, state):
    idx = _rng(state.rng_seed, _BATCH, state.step).integers(len(dataset.x0_w), size=state.cfg.batch_size)
    return obj.PairBatch(dataset.x0_w[idx], dataset.x0_l[idx], dataset.c[idx])


def evaluate(state, dataset, task=None):
    """Pair-level margins on a fixed slice of pairs and, given a task, preferred-mode mass.

    Each pair's margin is averaged over ``cfg.eval_draws`` draws of ``(t, noise)``,
    an estimate of the expected regression gap that the implicit reward is built
    on.  Accuracy ranks pairs by that average and the reported weight is the
    method's gradient weight at the pair's averaged ``lambda(t) * delta``.
    Returns ``(implicit_acc, mean_delta, mean_weight, pref_mass)``.
    """
    cfg = state.cfg
    n = min(cfg.eval_pairs, len(dataset.x0_w))
    k = cfg.eval_draws
    batch = obj.PairBatch(*(np.tile(a[:n], (k, 1)) for a in dataset))
    draws = obj.draw_noise(_rng(cfg.seed, _EVAL, 0), n * k, batch.x0_w.shape[1], cfg.schedule, cfg.dpo.shared_noise)
    m = obj.margins(state.policy, state.ref, batch, draws, cfg.dpo.kind, cfg.schedule)
    lam = np.asarray(obj.lambda_weight(cfg.schedule.paradigm, draws.t, cfg.schedule, cfg.dpo.lambda_mode))
    delta = m.delta.reshape(k, n).mean(axis=0)
    scaled = (lam * m.delta).reshape(k, n).mean(axis=0)
    if cfg.method == "dpo":
        weights = obj.dpo_gradient_weight(scaled, cfg.dpo.beta_bar)
    elif cfg.method == "linear-dpo":
        weights = obj.utility_weight(cfg.dpo, scaled)
    else:
        weights = np.ones(n)
    mass = float("nan")
    if task is not None and cfg.eval_samples > 0:
        mass = sampler_pref_mass(state.policy, cfg, task, cfg.eval_samples, cfg.eval_sample_steps)
    return obj.implicit_accuracy(delta), float(np.mean(delta)), float(np.mean(weights)), mass


def sampler_pref_mass(model, cfg, task, n, steps, mode="ode", seed=None):
    """Preferred-mode mass averaged over every preferred condition of the task."""
    seed = cfg.seed if seed is None else seed
    masses = []
    for p in task.preferred_indices:
        c = task.condition(p) if task.cond_dim else None
        xs = sample(model, cfg.schedule, cfg.dpo.kind, c, steps=steps, mode=mode, seed=seed, n=n)
        masses.append(pref_mass(xs, task, c))
    return float(np.mean(masses))


def as_batch(dataset):
    if isinstance(dataset, obj.PairBatch):
        return dataset
    return obj.stack_pairs(dataset)


# -- checkpoints -----------------------------------------------------------------


def state_to_dict(state, config_doc=None):
    return {
        "schema_version": CHECKPOINT_SCHEMA,
        "step": state.step,
        "rng_seed": state.rng_seed,
        "policy": model_to_dict(state.policy),
        "ref": model_to_dict(state.ref),
        "optimizer": optimizer_to_dict(state.optimizer),
        "config": config_doc,
    }


def state_from_dict(doc, cfg):
    if doc.get("schema_version") != CHECKPOINT_SCHEMA:
        raise ConfigError(f"unsupported checkpoint schema {doc.get('schema_version')!r}")
    return TrainState(
        doc["step"],
        model_from_dict(doc["policy"]),
        model_from_dict(doc["ref"]),
        optimizer_from_dict(doc["optimizer"]),
        doc["rng_seed"],
        cfg,
    )


def _prepare_out_dir(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write-probe"
    probe.write_text("")
    probe.unlink()
    return out


def train_run(
    cfg,
    dataset,
    total_steps,
    eval_every=100,
    out_dir=None,
    init_model=None,
    resume_from=None,
    task=None,
    config_doc=None,
):
    """Train for ``total_steps`` (absolute step count), evaluating every ``eval_every`` steps.

    With ``out_dir`` set, writes ``ckpt_<step>.json`` at step 0 and at each
    evaluation, ``final.json`` once at least one step was taken, and appends
    rows to ``metrics.csv``.
    ``resume_from`` continues from a checkpoint written by an earlier call.
    """
    out = _prepare_out_dir(out_dir) if out_dir is not None else None
    data = as_batch(dataset)
    if len(data.x0_w) == 0:
        raise ContractError("dataset must be nonempty")
    if resume_from is not None:
        state = state_from_dict(read_json(resume_from), cfg)
    else:
        state = init_state(cfg, data.x0_w.shape[1], data.c.shape[1], init_model)
    metrics = MetricsWriter(out / "metrics.csv", append=resume_from is not None) if out else None
    if out and resume_from is None:
        write_json(out / f"ckpt_{0:06d}.json", state_to_dict(state, config_doc))
    evals, history = [], []
    start = state.step
    while state.step < total_steps:
        state, row = train_step(state, sample_batch(data, state))
        history.append(row)
        if state.step % eval_every == 0 or state.step == total_steps:
            acc, mean_delta, mean_weight, mass = evaluate(state, data, task)
            row = MetricsRow(state.step, row.loss, acc, mean_delta, mean_weight, mass)
            evals.append(row)
            log.info("step %d loss %.5g acc %.3f weight %.4g mass %.3f", *row[:3], row.mean_weight, row.pref_mass)
            if out:
                metrics.write(row)
                write_json(out / f"ckpt_{state.step:06d}.json", state_to_dict(state, config_doc))
    if out and state.step > start:
        write_json(out / "final.json", state_to_dict(state, config_doc))
    return RunResult(state, evals, history)


def train_sft(cfg, winners, total_steps, out_dir=None, init_model=None, config_doc=None):
    """Regression on clean samples only; returns the trained model.

    ``winners`` is a list of ``PreferencePair`` (winners are used), a
    ``PairBatch``, or an ``(x0, c)`` tuple of arrays.
    """
    if isinstance(winners, tuple) and not isinstance(winners, obj.PairBatch):
        x0, c = (np.asarray(a, dtype=np.float64) for a in winners)
        data = obj.PairBatch(x0, x0, c.reshape(len(x0), -1))
    else:
        data = as_batch(winners)
    sft_cfg = replace(cfg, method="sft")
    return train_run(sft_cfg, data, total_steps, eval_every=max(total_steps, 1), out_dir=out_dir,
                     init_model=init_model, config_doc=config_doc).state.policy
