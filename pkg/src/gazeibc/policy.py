"""Implicit (energy-based) and explicit (MSE) gaze policies.

Langevin refinement runs in a unit box: an action ``a`` is represented by
``u = (a - mid) / half`` where ``mid``/``half`` come from the dataset action
bounds, so step sizes and noise levels do not depend on how large the
per-frame gaze changes of a particular dataset are.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import ActionBounds
from .nn import (ContractError, MlpConfig, MlpParams, NormalizationStats, init_params,
                 mlp_forward, mlp_forward_backward)

ACTION_DIM = 2


@dataclass(frozen=True)
class LangevinConfig:
    n_mcmc: int = 100
    eta_init: float = 0.1
    eta_final: float = 1e-3
    decay: float = 2.0
    noise_scale: float = 0.1
    grad_clip: float = 1.0
    n_samples: int = 64

    def __post_init__(self):
        if self.n_mcmc < 1 or self.n_samples < 1:
            raise ContractError("n_mcmc and n_samples must be >= 1")
        if not self.eta_init >= self.eta_final > 0:
            raise ContractError("need eta_init >= eta_final > 0")

    def step_sizes(self) -> np.ndarray:
        """Polynomial decay from ``eta_init`` (first step) to ``eta_final`` (last)."""
        if self.n_mcmc == 1:
            return np.array([self.eta_init])
        frac = np.arange(self.n_mcmc) / (self.n_mcmc - 1)
        return (self.eta_init - self.eta_final) * (1.0 - frac) ** self.decay + self.eta_final


def sample_uniform_actions(bounds: ActionBounds, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ContractError("n must be >= 1")
    return bounds.low + (bounds.high - bounds.low) * rng.random((n, ACTION_DIM))


def _to_unit(bounds: ActionBounds, actions):
    half = bounds.half
    safe = np.where(half > 0, half, 1.0)
    return np.where(half > 0, (actions - bounds.mid) / safe, 0.0)


def _from_unit(bounds: ActionBounds, u):
    return np.clip(bounds.mid + bounds.half * u, bounds.low, bounds.high)


@dataclass
class EbmPolicy:
    """Energy model ``E(o, a)``: an MLP over ``[obs, action]`` with scalar output."""

    config: MlpConfig
    params: MlpParams
    stats: NormalizationStats
    bounds: ActionBounds
    langevin: LangevinConfig = field(default_factory=LangevinConfig)
    kind: str = "ebm"

    def __post_init__(self):
        if self.config.output_dim != 1:
            raise ContractError("an energy model must have output_dim == 1")
        if self.config.input_dim <= ACTION_DIM:
            raise ContractError("input must hold an observation and a 2-d action")
        self.params.check(self.config)

    @classmethod
    def create(cls, obs_dim: int, bounds: ActionBounds, rng: np.random.Generator,
               hidden_dims=(256, 256), activation="relu", dropout_rate=0.1,
               stats: NormalizationStats | None = None,
               langevin: LangevinConfig | None = None) -> EbmPolicy:
        cfg = MlpConfig(obs_dim + ACTION_DIM, tuple(hidden_dims), 1, activation, dropout_rate)
        stats = stats or NormalizationStats.identity(cfg.input_dim, 1)
        return cls(cfg, init_params(cfg, rng), stats, bounds, langevin or LangevinConfig())

    @property
    def obs_dim(self) -> int:
        return self.config.input_dim - ACTION_DIM

    def _inputs(self, obs, actions):
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        obs = np.asarray(obs, dtype=np.float64)
        if actions.shape[1] != ACTION_DIM:
            raise ContractError(f"actions must have width {ACTION_DIM}")
        if obs.shape[-1] != self.obs_dim:
            raise ContractError(f"observation width {obs.shape[-1]} != {self.obs_dim}")
        obs = np.broadcast_to(obs, (len(actions), self.obs_dim))
        return np.concatenate([obs, actions], axis=1)

    def energy(self, obs, actions) -> np.ndarray:
        """Eval-mode energies, one per action row."""
        return mlp_forward(self.config, self.params, self.stats, self._inputs(obs, actions))[:, 0]

    def action_grad(self, obs, actions) -> np.ndarray:
        x = self._inputs(obs, actions)
        _, _, gx = mlp_forward_backward(self.config, self.params, self.stats, x,
                                        np.ones((len(x), 1)), need_param_grads=False)
        return gx[:, self.obs_dim:]

    def act(self, obs, rng: np.random.Generator) -> np.ndarray:
        return ibc_infer(self, obs, self.langevin, rng)

    def as_fn(self, rng: np.random.Generator):
        return lambda obs: self.act(obs, rng)


@dataclass
class QuadraticEnergy:
    """Closed-form energy ``scale * ||a - target||^2`` (observation ignored)."""

    target: np.ndarray
    bounds: ActionBounds
    scale: float = 1.0

    def energy(self, obs, actions):
        d = np.atleast_2d(actions) - self.target
        return self.scale * np.sum(d * d, axis=1)

    def action_grad(self, obs, actions):
        return 2.0 * self.scale * (np.atleast_2d(actions) - self.target)


@dataclass
class LangevinResult:
    actions: np.ndarray
    restarts: int


def langevin_refine(model, obs, actions, cfg: LangevinConfig, rng: np.random.Generator,
                    mode: str = "infer") -> LangevinResult:
    """Refine actions by annealed Langevin dynamics on ``model``'s energy.

    Per step ``k``: ``u <- clip(u - eta_k * clip(grad_u E) + noise_scale *
    sqrt(eta_k) * xi, -1, 1)`` in the unit box of ``model.bounds``.  In
    ``"infer"`` mode the last step adds no noise.  A chain whose gradient is
    non-finite restarts from a fresh uniform sample.

    ``obs`` is either one observation shared by all chains or one row per chain.
    """
    if mode not in ("train", "infer"):
        raise ContractError(f"mode must be 'train' or 'infer', got {mode!r}")
    bounds = model.bounds
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    n = len(actions)
    if np.any(actions < bounds.low - 1e-12) or np.any(actions > bounds.high + 1e-12):
        raise ContractError("initial actions must lie within the action bounds")
    etas = cfg.step_sizes()
    noise = rng.standard_normal((cfg.n_mcmc, n, ACTION_DIM))
    fresh = rng.uniform(-1.0, 1.0, size=(n, ACTION_DIM))
    u0 = _to_unit(bounds, actions)
    noiseless_last = mode == "infer"
    if isinstance(model, EbmPolicy) and model.config.hidden_dims and _kernels.use_numba():
        u, restarts = _refine_compiled(model, obs, u0, fresh, etas, noise, cfg, noiseless_last)
    else:
        u, restarts = _refine_numpy(model, obs, u0, fresh, etas, noise, cfg, noiseless_last)
    return LangevinResult(_from_unit(bounds, u), int(restarts))


def _refine_numpy(model, obs, u0, fresh, etas, noise, cfg, noiseless_last):
    bounds = model.bounds
    half = bounds.half
    u = u0.copy()
    restarts = 0
    for k, eta in enumerate(etas):
        with np.errstate(all="ignore"):
            g = model.action_grad(obs, _from_unit(bounds, u)) * half
        bad = ~np.all(np.isfinite(g), axis=1)
        if bad.any():
            restarts += int(bad.sum())
            g[bad] = 0.0
        g = np.clip(g, -cfg.grad_clip, cfg.grad_clip)
        sigma = 0.0 if (noiseless_last and k == len(etas) - 1) else cfg.noise_scale * np.sqrt(eta)
        stepped = np.clip(u - eta * g + sigma * noise[k], -1.0, 1.0)
        u = np.where(bad[:, None], fresh, stepped)
    return u, restarts


def _refine_compiled(policy: EbmPolicy, obs, u0, fresh, etas, noise, cfg, noiseless_last):
    stats, params = policy.stats, policy.params
    d = policy.obs_dim
    obs = np.broadcast_to(np.asarray(obs, dtype=np.float64), (len(u0), d))
    w1 = params.weights[0]
    a_mean, a_std = stats.input_mean[d:], stats.input_std[d:]
    obs_n = (obs - stats.input_mean[:d]) / stats.input_std[:d]
    mid_n = (policy.bounds.mid - a_mean) / a_std
    first_pre = np.ascontiguousarray(obs_n @ w1[:d] + mid_n @ w1[d:] + params.biases[0])
    act_rows = np.ascontiguousarray((policy.bounds.half / a_std)[:, None] * w1[d:])
    rest_w = tuple(np.ascontiguousarray(w) for w in params.weights[1:])
    rest_b = tuple(np.ascontiguousarray(b) for b in params.biases[1:])
    act_code = _kernels.ACT_RELU if policy.config.activation == "relu" else _kernels.ACT_TANH
    return _kernels.langevin_mlp_chains(
        first_pre, act_rows, rest_w, rest_b, float(stats.output_std[0]), act_code,
        np.ascontiguousarray(u0), np.ascontiguousarray(fresh), np.ascontiguousarray(etas),
        np.ascontiguousarray(noise), float(cfg.noise_scale), float(cfg.grad_clip),
        bool(noiseless_last))


def ibc_infer(model, obs, cfg: LangevinConfig, rng: np.random.Generator,
              return_info: bool = False):
    """Two Langevin passes from uniform samples, then the lowest-energy chain."""
    bounds = model.bounds
    init = sample_uniform_actions(bounds, cfg.n_samples, rng)
    first = langevin_refine(model, obs, init, cfg, rng, mode="infer")
    second = langevin_refine(model, obs, first.actions, cfg, rng, mode="infer")
    with np.errstate(all="ignore"):
        energies = model.energy(obs, second.actions)
    candidates = second.actions
    fallback = False
    if not np.any(np.isfinite(energies)):
        fallback = True
        with np.errstate(all="ignore"):
            energies = model.energy(obs, init)
        candidates = init
    energies = np.where(np.isfinite(energies), energies, np.inf)
    best = int(np.argmin(energies))
    action = bounds.clip(candidates[best])
    if return_info:
        return action, {"energy": float(energies[best]), "fallback": fallback,
                        "restarts": first.restarts + second.restarts}
    return action


@dataclass
class MsePolicy:
    """Explicit regression policy ``a = F(o)`` clipped to the action bounds."""

    config: MlpConfig
    params: MlpParams
    stats: NormalizationStats
    bounds: ActionBounds
    kind: str = "mse"

    def __post_init__(self):
        if self.config.output_dim != ACTION_DIM:
            raise ContractError("an MSE policy must output a 2-d action")
        self.params.check(self.config)

    @classmethod
    def create(cls, obs_dim: int, bounds: ActionBounds, rng: np.random.Generator,
               hidden_dims=(256, 256), activation="relu", dropout_rate=0.1,
               stats: NormalizationStats | None = None) -> MsePolicy:
        cfg = MlpConfig(obs_dim, tuple(hidden_dims), ACTION_DIM, activation, dropout_rate)
        stats = stats or NormalizationStats.identity(obs_dim, ACTION_DIM)
        return cls(cfg, init_params(cfg, rng), stats, bounds)

    @property
    def obs_dim(self) -> int:
        return self.config.input_dim

    def predict(self, obs) -> np.ndarray:
        """Unclipped network output."""
        return mlp_forward(self.config, self.params, self.stats, obs)

    def act(self, obs, rng=None) -> np.ndarray:
        return mse_infer(self, obs)

    def as_fn(self, rng=None):
        return lambda obs: mse_infer(self, obs)


def mse_infer(policy: MsePolicy, obs) -> np.ndarray:
    return policy.bounds.clip(policy.predict(obs))
