"""Small fully connected networks with hand-derived gradients, plus Adam.

Networks here are at most a few layers, so explicit backprop keeps the
dependency surface at zero and lets every gradient be checked against
central finite differences. Hidden layers apply the activation; the final
layer is always a linear readout. The first layer's input may be augmented
with a scalar time column (``time_conditioned``) and/or a condition vector
(``condition_dim`` > 0); those extras widen the first weight matrix only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ShapeError, ValidationError

ACTIVATIONS = ("relu", "tanh")


@dataclass
class MlpModel:
    """Feedforward network: layer_dims = (input, hidden..., output)."""

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    time_conditioned: bool = False
    condition_dim: int = 0

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list, interleaved [W0, b0, W1, b1, ...]."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())


def init_mlp(
    layer_dims,
    rng: np.random.Generator,
    activation: str = "relu",
    time_conditioned: bool = False,
    condition_dim: int = 0,
) -> MlpModel:
    """He-style initialisation: std = gain / sqrt(fan_in), zero biases.

    gain is sqrt(2) for relu hidden layers, 1 for tanh and for the linear
    readout.
    """
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2:
        raise ValidationError("layer_dims needs at least input and output sizes")
    if any(d < 1 for d in dims):
        raise ValidationError(f"layer dims must be positive, got {dims}")
    if activation not in ACTIVATIONS:
        raise ValidationError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
    extras = (1 if time_conditioned else 0) + int(condition_dim)
    hidden_gain = np.sqrt(2.0) if activation == "relu" else 1.0
    n_layers = len(dims) - 1
    weights, biases = [], []
    for layer in range(n_layers):
        fan_in = dims[layer] + (extras if layer == 0 else 0)
        fan_out = dims[layer + 1]
        gain = hidden_gain if layer < n_layers - 1 else 1.0
        weights.append(rng.normal(0.0, gain / np.sqrt(fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(
        layer_dims=dims,
        weights=weights,
        biases=biases,
        activation=activation,
        time_conditioned=time_conditioned,
        condition_dim=int(condition_dim),
    )


def _augment_input(model: MlpModel, x, t, s) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected 2-d input, got shape {x.shape}")
    if x.shape[1] != model.input_dim:
        raise ShapeError(
            f"input layer expects {model.input_dim} columns, got {x.shape[1]}"
        )
    cols = [x]
    if model.time_conditioned:
        if t is None:
            raise ShapeError("model is time-conditioned but t was not given")
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        if t.shape[0] != x.shape[0]:
            raise ShapeError(f"t has {t.shape[0]} entries for {x.shape[0]} rows")
        cols.append(t[:, None])
    elif t is not None:
        raise ShapeError("t given but model is not time-conditioned")
    if model.condition_dim > 0:
        if s is None:
            raise ShapeError("model has condition input but s was not given")
        s = np.asarray(s, dtype=np.float64)
        if s.ndim == 1:
            s = np.broadcast_to(s, (x.shape[0], s.shape[0]))
        if s.shape != (x.shape[0], model.condition_dim):
            raise ShapeError(
                f"condition input expects shape ({x.shape[0]}, {model.condition_dim}),"
                f" got {s.shape}"
            )
        cols.append(s)
    elif s is not None:
        raise ShapeError("s given but model has condition_dim 0")
    return cols[0] if len(cols) == 1 else np.concatenate(cols, axis=1)


def _forward_cached(model: MlpModel, x, t=None, s=None):
    """Forward pass returning (output, cache) for reuse by the backward pass."""
    a = _augment_input(model, x, t, s)
    n_layers = len(model.weights)
    pre: list[np.ndarray] = []    # pre-activations z_l
    post: list[np.ndarray] = [a]  # layer inputs a_l (post-activation)
    for layer in range(n_layers):
        w, b = model.weights[layer], model.biases[layer]
        if post[-1].shape[1] != w.shape[0]:
            raise ShapeError(
                f"layer {layer} expects {w.shape[0]} inputs, got {post[-1].shape[1]}"
            )
        z = post[-1] @ w + b
        pre.append(z)
        if layer < n_layers - 1:
            if model.activation == "relu":
                post.append(np.maximum(z, 0.0))
            else:
                post.append(np.tanh(z))
    return pre[-1], (pre, post)


def mlp_forward(model: MlpModel, x, t=None, s=None) -> np.ndarray:
    """Evaluate the network on a batch of rows."""
    out, _ = _forward_cached(model, x, t, s)
    return out


def mlp_backward(model: MlpModel, x, t=None, s=None, upstream=None, cache=None):
    """Gradients of <upstream, forward(x)> w.r.t. every parameter and x.

    Returns (param_grads, x_grad) where param_grads matches
    ``model.parameters()`` order and x_grad covers the x columns only (the
    time/condition columns of the first layer are dropped).
    """
    if upstream is None:
        raise ShapeError("upstream gradient is required")
    if cache is None:
        _, cache = _forward_cached(model, x, t, s)
    pre, post = cache
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != pre[-1].shape:
        raise ShapeError(
            f"upstream gradient shape {upstream.shape} != output shape {pre[-1].shape}"
        )
    n_layers = len(model.weights)
    w_grads: list[np.ndarray] = [None] * n_layers
    b_grads: list[np.ndarray] = [None] * n_layers
    g = upstream
    for layer in range(n_layers - 1, -1, -1):
        w_grads[layer] = post[layer].T @ g
        b_grads[layer] = g.sum(axis=0)
        g = g @ model.weights[layer].T
        if layer > 0:
            z = pre[layer - 1]
            if model.activation == "relu":
                g = g * (z > 0.0)
            else:
                g = g * (1.0 - np.tanh(z) ** 2)
    x_grad = g[:, : model.input_dim]
    grads: list[np.ndarray] = []
    for wg, bg in zip(w_grads, b_grads):
        grads.append(wg)
        grads.append(bg)
    return grads, x_grad


@dataclass
class AdamState:
    """Decoupled-weight-decay Adam (AdamW) state for one parameter list."""

    learning_rate: float
    betas: tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    first_moments: list[np.ndarray] = field(default_factory=list)
    second_moments: list[np.ndarray] = field(default_factory=list)


def adam_init(params, learning_rate, betas=(0.9, 0.999), epsilon=1e-8,
              weight_decay=0.0) -> AdamState:
    return AdamState(
        learning_rate=float(learning_rate),
        betas=(float(betas[0]), float(betas[1])),
        epsilon=float(epsilon),
        weight_decay=float(weight_decay),
        first_moments=[np.zeros_like(p) for p in params],
        second_moments=[np.zeros_like(p) for p in params],
    )


def adam_step(state: AdamState, params, grads):
    """One AdamW update. Mutates params and state in place; returns both."""
    if len(params) != len(state.first_moments) or len(params) != len(grads):
        raise ShapeError("params/grads do not match the optimizer state")
    b1, b2 = state.betas
    state.step += 1
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    lr = state.learning_rate
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ShapeError(f"gradient {i} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient at parameter index {i}")
        m = state.first_moments[i]
        v = state.second_moments[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p -= lr * state.weight_decay * p
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state
