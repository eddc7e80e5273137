"""Small MLP regressor, gradients, and the AdamW update.

The network maps ``(x_t, t, c)`` to a prediction with the same dimension as
``x_t``.  Time enters as three features ``(t, sin 2pi t, cos 2pi t)``, so the
first layer width must be ``data_dim + 3 + cond_dim``.

Parameters live in one flat float64 vector.  Layer ``i`` owns a weight block
of shape ``(fan_in, fan_out)`` followed by a bias of length ``fan_out``; the
forward pass is ``h @ W + b``.
"""

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor, as_tensor, value_of
from .errors import ConfigError, ContractError, ShapeError

ACTIVATIONS = ("tanh", "silu")
TIME_FEATURES = 3
CHECKPOINT_SCHEMA = 1


@dataclass
class MlpModel:
    layer_dims: tuple
    activation: str
    params: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (param_count(self.layer_dims),):
            raise ShapeError(
                f"expected {param_count(self.layer_dims)} parameters, got {self.params.shape}"
            )

    @property
    def in_dim(self):
        return self.layer_dims[0]

    @property
    def out_dim(self):
        return self.layer_dims[-1]

    @property
    def data_dim(self):
        return self.out_dim

    @property
    def cond_dim(self):
        return self.in_dim - self.out_dim - TIME_FEATURES

    def with_params(self, params):
        return replace(self, params=np.array(params, dtype=np.float64))

    def copy(self):
        return self.with_params(self.params)

    def layers(self):
        """Yield ``(W, b)`` views into the flat parameter vector."""
        for (start, stop, shape), (bstart, bstop) in _layout(self.layer_dims):
            yield self.params[start:stop].reshape(shape), self.params[bstart:bstop]

    def __call__(self, x, t, c=None):
        return mlp_forward(self, x, t, c)


def param_count(layer_dims):
    return sum(a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:]))


def _layout(layer_dims):
    offset = 0
    out = []
    for a, b in zip(layer_dims[:-1], layer_dims[1:]):
        w = (offset, offset + a * b, (a, b))
        offset += a * b
        out.append((w, (offset, offset + b)))
        offset += b
    return out


def mlp_init(layer_dims, activation="tanh", seed=0):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    layer_dims = tuple(layer_dims)
    if len(layer_dims) < 2 or any(int(d) <= 0 for d in layer_dims):
        raise ConfigError(f"need at least two positive layer widths, got {layer_dims}")
    if activation not in ACTIVATIONS:
        raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
    rng = np.random.default_rng(seed)
    params = np.zeros(param_count(layer_dims))
    for (start, stop, shape), _ in _layout(layer_dims):
        bound = 1.0 / np.sqrt(shape[0])
        params[start:stop] = rng.uniform(-bound, bound, size=shape[0] * shape[1])
    return MlpModel(layer_dims, activation, params, seed)


def time_embedding(t):
    t = np.asarray(t, dtype=np.float64)
    return np.stack([t, np.sin(2 * np.pi * t), np.cos(2 * np.pi * t)], axis=-1)


def build_input(model, x, t, c=None):
    """Concatenate ``(x, time features, c)`` into a ``(batch, in_dim)`` matrix."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    n = x.shape[0]
    if x.shape[1] != model.data_dim:
        raise ShapeError(f"x has dimension {x.shape[1]}, model expects {model.data_dim}")
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    if model.cond_dim:
        if c is None:
            raise ShapeError(f"model expects a condition of dimension {model.cond_dim}")
        c = np.broadcast_to(np.asarray(c, dtype=np.float64), (n, model.cond_dim)) if np.ndim(c) == 1 else np.asarray(c, dtype=np.float64)
        if c.shape != (n, model.cond_dim):
            raise ShapeError(f"condition has shape {c.shape}, expected {(n, model.cond_dim)}")
        parts = [x, time_embedding(t), c]
    else:
        if c is not None and np.size(c):
            raise ShapeError("model takes no condition input")
        parts = [x, time_embedding(t)]
    return np.concatenate(parts, axis=1), squeeze


def forward(model, x, t, c=None, theta=None):
    """Forward pass on the tape.

    ``theta`` overrides the model's parameters; pass a ``Tensor`` with
    ``requires_grad=True`` to record the graph.  Returns a ``Tensor`` of shape
    ``(batch, data_dim)`` (or ``(data_dim,)`` for a single unbatched input).
    """
    inp, squeeze = build_input(model, x, t, c)
    theta = as_tensor(model.params if theta is None else theta)
    h = Tensor(inp)
    layout = _layout(model.layer_dims)
    for i, ((start, stop, shape), (bstart, bstop)) in enumerate(layout):
        W = theta.slice_reshape(start, stop, shape)
        b = theta.slice_reshape(bstart, bstop, (shape[1],))
        h = h @ W + b
        if i < len(layout) - 1:
            h = h.tanh() if model.activation == "tanh" else h.silu()
    if squeeze:
        h = h.sum(axis=0)
    return h


def mlp_forward(model, x_t, t, c=None):
    return forward(model, x_t, t, c).value


def grad_loss(model, loss_closure):
    """Exact reverse-mode gradient of ``loss_closure`` at the model's parameters.

    ``loss_closure(theta)`` receives the flat parameter vector as a tape
    ``Tensor`` and must return a scalar.
    """
    theta = Tensor(model.params.copy(), requires_grad=True)
    loss = as_tensor(loss_closure(theta))
    if loss.value.size != 1:
        raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return np.zeros_like(model.params)
    loss.backward()
    return np.zeros_like(model.params) if theta.grad is None else theta.grad.copy()


def finite_diff_grad(loss_closure, params, h=1e-5):
    """Central-difference gradient of a scalar function of a flat vector."""
    if h <= 0:
        raise ContractError("step h must be positive")
    params = np.array(params, dtype=np.float64)
    scalar = np.ndim(params) == 0
    params = np.atleast_1d(params)
    grad = np.zeros_like(params)
    for i in range(params.size):
        orig = params[i]
        params[i] = orig + h
        fp = float(value_of(loss_closure(params.reshape(()) if scalar else params.copy())))
        params[i] = orig - h
        fm = float(value_of(loss_closure(params.reshape(()) if scalar else params.copy())))
        params[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(()) if scalar else grad


@dataclass
class OptimizerState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    weight_decay: float = 1e-4
    warmup_steps: int = 0

    @classmethod
    def zeros_like(cls, params, **hparams):
        n = np.shape(params)
        return cls(np.zeros(n), np.zeros(n), **hparams)

    def current_lr(self):
        """Learning rate for the next step (linear warmup, then constant)."""
        if self.warmup_steps > 0:
            return self.lr * min(1.0, (self.step_count + 1) / self.warmup_steps)
        return self.lr

    def copy(self):
        return replace(self, first_moment=self.first_moment.copy(), second_moment=self.second_moment.copy())


def optimizer_step(params, grads, state):
    """One AdamW step with bias correction and decoupled weight decay.

    Returns ``(new_params, new_state)``; inputs are not modified.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ContractError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, moments {state.first_moment.shape}"
        )
    lr = state.current_lr()
    k = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**k)
    v_hat = v / (1.0 - state.beta2**k)
    new_params = params - lr * (m_hat / (np.sqrt(v_hat) + state.eps_opt) + state.weight_decay * params)
    return new_params, replace(state, first_moment=m, second_moment=v, step_count=k)


def model_to_dict(model, optimizer=None):
    doc = {
        "schema_version": CHECKPOINT_SCHEMA,
        "layer_dims": list(model.layer_dims),
        "activation": model.activation,
        "seed": model.seed,
        "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in model.layers()],
    }
    if optimizer is not None:
        doc["optimizer"] = optimizer_to_dict(optimizer)
    return doc


def model_from_dict(doc):
    if doc.get("schema_version") != CHECKPOINT_SCHEMA:
        raise ConfigError(f"unsupported checkpoint schema {doc.get('schema_version')!r}")
    dims = tuple(doc["layer_dims"])
    flat = []
    for layer in doc["layers"]:
        flat.append(np.asarray(layer["W"], dtype=np.float64).ravel())
        flat.append(np.asarray(layer["b"], dtype=np.float64).ravel())
    params = np.concatenate(flat) if flat else np.zeros(0)
    return MlpModel(dims, doc["activation"], params, doc.get("seed", 0))


def optimizer_to_dict(state):
    return {
        "first_moment": state.first_moment.tolist(),
        "second_moment": state.second_moment.tolist(),
        "step_count": state.step_count,
        "lr": state.lr,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps_opt": state.eps_opt,
        "weight_decay": state.weight_decay,
        "warmup_steps": state.warmup_steps,
    }


def optimizer_from_dict(doc):
    doc = dict(doc)
    m = np.asarray(doc.pop("first_moment"), dtype=np.float64)
    v = np.asarray(doc.pop("second_moment"), dtype=np.float64)
    return OptimizerState(m, v, **doc)
