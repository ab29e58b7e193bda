"""Dense MLP with hand-written forward/backward passes and an Adam optimizer.

Layer stack: input normalization, then for every hidden layer
``dense -> activation -> dropout``, then a linear output layer and output
de-normalization.  Dropout uses the inverted convention (scaled at train
time) so evaluation is a plain pass.

Arrays are float64.  A single input vector of shape ``(d,)`` and a batch of
shape ``(B, d)`` are both accepted everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STD_FLOOR = 1e-6
ACTIVATIONS = ("relu", "tanh")


class ContractError(ValueError):
    """Raised when shapes or values violate an operation's preconditions."""


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = (256, 256)
    output_dim: int = 1
    activation: str = "relu"
    dropout_rate: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ContractError("input_dim and output_dim must be >= 1")
        if any(h < 1 for h in self.hidden_dims):
            raise ContractError(f"hidden dims must be >= 1, got {self.hidden_dims}")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        sizes = [self.input_dim, *self.hidden_dims, self.output_dim]
        return list(zip(sizes[:-1], sizes[1:]))


@dataclass
class MlpParams:
    """Weights ``W[l]`` of shape (fan_in, fan_out) and biases ``b[l]``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> MlpParams:
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> MlpParams:
        return MlpParams([np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases])

    def check(self, config: MlpConfig) -> None:
        dims = config.layer_dims
        if len(self.weights) != len(dims) or len(self.biases) != len(dims):
            raise ContractError("layer count does not match config")
        for i, ((fi, fo), w, b) in enumerate(zip(dims, self.weights, self.biases)):
            if w.shape != (fi, fo) or b.shape != (fo,):
                raise ContractError(f"layer {i}: expected W{(fi, fo)} b({fo},), "
                                    f"got W{w.shape} b{b.shape}")


@dataclass
class NormalizationStats:
    input_mean: np.ndarray
    input_std: np.ndarray
    output_mean: np.ndarray
    output_std: np.ndarray

    @classmethod
    def identity(cls, input_dim: int, output_dim: int) -> NormalizationStats:
        return cls(np.zeros(input_dim), np.ones(input_dim),
                   np.zeros(output_dim), np.ones(output_dim))

    def normalize_input(self, x):
        return (x - self.input_mean) / self.input_std

    def denormalize_output(self, y):
        return y * self.output_std + self.output_mean

    def normalize_output(self, y):
        return (y - self.output_mean) / self.output_std


def compute_normalization_stats(inputs, outputs) -> NormalizationStats:
    """Per-dimension population mean/std, with std floored at ``STD_FLOOR``."""
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(outputs, dtype=np.float64)
    if x.size == 0 or y.size == 0:
        raise ContractError("cannot compute normalization stats from an empty set")
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    if len(x) != len(y):
        raise ContractError(f"inputs ({len(x)}) and outputs ({len(y)}) differ in length")
    return NormalizationStats(
        x.mean(axis=0), np.maximum(x.std(axis=0), STD_FLOOR),
        y.mean(axis=0), np.maximum(y.std(axis=0), STD_FLOOR),
    )


def init_params(config: MlpConfig, rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in config.layer_dims:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def sample_dropout_masks(config: MlpConfig, batch: int, rng: np.random.Generator):
    """Inverted-dropout masks (entries 0 or 1/(1-p)) for every hidden layer."""
    p = config.dropout_rate
    keep = 1.0 - p
    return [(rng.random((batch, h)) < keep) / keep for h in config.hidden_dims]


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(z, h, kind):
    if kind == "relu":
        return (z > 0.0).astype(z.dtype)
    return 1.0 - h * h


def _as_batch(config: MlpConfig, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != config.input_dim:
        raise ContractError(f"expected input of width {config.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x2)):
        raise ContractError("non-finite input to mlp_forward")
    return x2, single


def _check_masks(config: MlpConfig, masks, batch: int):
    if masks is None:
        return
    if len(masks) != len(config.hidden_dims):
        raise ContractError("one dropout mask per hidden layer is required")
    for m, h in zip(masks, config.hidden_dims):
        if np.shape(m) not in ((batch, h), (h,)):
            raise ContractError(f"dropout mask shape {np.shape(m)} != ({batch}, {h})")


def _forward_cache(config, params, stats, x2, masks):
    xn = stats.normalize_input(x2)
    pre, post = [], []
    h = xn
    n_hidden = len(config.hidden_dims)
    for layer in range(n_hidden):
        z = h @ params.weights[layer] + params.biases[layer]
        a = _activate(z, config.activation)
        pre.append(z)
        post.append(a)
        h = a if masks is None else a * masks[layer]
    out = h @ params.weights[-1] + params.biases[-1]
    return xn, pre, post, h, out


def mlp_forward(config: MlpConfig, params: MlpParams, stats: NormalizationStats, x,
                masks=None) -> np.ndarray:
    """De-normalized network output.

    ``masks=None`` is evaluation mode; pass the list from
    :func:`sample_dropout_masks` for a training-mode pass.
    """
    x2, single = _as_batch(config, x)
    _check_masks(config, masks, len(x2))
    *_, out = _forward_cache(config, params, stats, x2, masks)
    y = stats.denormalize_output(out)
    return y[0] if single else y


def mlp_vjp(config: MlpConfig, params: MlpParams, stats: NormalizationStats, x,
            masks=None):
    """Forward pass returning ``(output, backward)``.

    ``backward(upstream, need_param_grads=True)`` gives ``(param_grads,
    input_grad)`` for ``sum(output * upstream)``: parameter gradients summed
    over the batch, input gradients w.r.t. the raw (un-normalized) input.
    """
    x2, single = _as_batch(config, x)
    _check_masks(config, masks, len(x2))
    xn, pre, post, _, out = _forward_cache(config, params, stats, x2, masks)
    y = stats.denormalize_output(out)

    def backward(upstream, need_param_grads: bool = True):
        g = np.asarray(upstream, dtype=np.float64)
        g2 = g[None, :] if g.ndim == 1 else g
        if g2.shape != (len(x2), config.output_dim):
            raise ContractError(f"upstream gradient shape {g.shape} does not match output "
                                f"({len(x2)}, {config.output_dim})")
        delta = g2 * stats.output_std
        n_layers = len(params.weights)
        w_grads = [None] * n_layers
        b_grads = [None] * n_layers
        for layer in range(n_layers - 1, -1, -1):
            if need_param_grads:
                if layer == 0:
                    inp = xn
                else:
                    inp = post[layer - 1] if masks is None else post[layer - 1] * masks[layer - 1]
                w_grads[layer] = inp.T @ delta
                b_grads[layer] = delta.sum(axis=0)
            delta = delta @ params.weights[layer].T
            if layer > 0:
                if masks is not None:
                    delta = delta * masks[layer - 1]
                delta = delta * _activation_grad(pre[layer - 1], post[layer - 1], config.activation)
        input_grad = delta / stats.input_std
        grads = MlpParams(w_grads, b_grads) if need_param_grads else None
        return grads, (input_grad[0] if single else input_grad)

    return (y[0] if single else y), backward


def mlp_forward_backward(config: MlpConfig, params: MlpParams, stats: NormalizationStats,
                         x, upstream, masks=None, need_param_grads: bool = True):
    """Forward and backward in one call: ``(output, param_grads, input_grad)``."""
    y, backward = mlp_vjp(config, params, stats, x, masks)
    grads, input_grad = backward(upstream, need_param_grads)
    return y, grads, input_grad


def mlp_backward(config: MlpConfig, params: MlpParams, stats: NormalizationStats, x,
                 upstream, masks=None):
    """Gradients of ``output . upstream`` w.r.t. parameters and input.

    Use the same ``masks`` as the paired forward call.
    """
    _, grads, input_grad = mlp_forward_backward(config, params, stats, x, upstream, masks)
    return grads, input_grad


@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: MlpParams, **hyper) -> AdamState:
        return cls(params.zeros_like(), params.zeros_like(), **hyper)

    def copy(self) -> AdamState:
        return AdamState(self.m.copy(), self.v.copy(), self.step,
                         self.lr, self.beta1, self.beta2, self.eps)


class NonFiniteGradient(FloatingPointError):
    def __init__(self, layer: int, what: str):
        super().__init__(f"non-finite {what} gradient in layer {layer}")
        self.layer = layer


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState):
    """One bias-corrected Adam update.  Returns new ``(params, state)``."""
    for layer, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        if not np.all(np.isfinite(gw)):
            raise NonFiniteGradient(layer, "weight")
        if not np.all(np.isfinite(gb)):
            raise NonFiniteGradient(layer, "bias")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t

    def update(p, g, m, v):
        m_new = b1 * m + (1.0 - b1) * g
        v_new = b2 * v + (1.0 - b2) * (g * g)
        p_new = p - state.lr * (m_new / bc1) / (np.sqrt(v_new / bc2) + state.eps)
        return p_new, m_new, v_new

    new_p = params.zeros_like()
    new_m = params.zeros_like()
    new_v = params.zeros_like()
    for kind in ("weights", "biases"):
        for i, (p, g, m, v) in enumerate(zip(getattr(params, kind), getattr(grads, kind),
                                             getattr(state.m, kind), getattr(state.v, kind))):
            p2, m2, v2 = update(p, g, m, v)
            getattr(new_p, kind)[i] = p2
            getattr(new_m, kind)[i] = m2
            getattr(new_v, kind)[i] = v2
    return new_p, AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)


@dataclass
class Mlp:
    """Config, parameters and normalization statistics bundled together."""

    config: MlpConfig
    params: MlpParams
    stats: NormalizationStats = field(default=None)

    def __post_init__(self):
        if self.stats is None:
            self.stats = NormalizationStats.identity(self.config.input_dim, self.config.output_dim)
        self.params.check(self.config)

    def __call__(self, x, masks=None):
        return mlp_forward(self.config, self.params, self.stats, x, masks)
