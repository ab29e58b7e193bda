"""Training loops: InfoNCE over Langevin negatives (IBC) and MSE regression.

All randomness is derived from ``(seed, stream, index)`` triples, so a run
resumed from a checkpoint at step ``k`` continues exactly like an
uninterrupted run.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import logsumexp, softmax

from .checkpoint import load_policy, save_policy
from .data import action_bounds, transitions
from .nn import (AdamState, ContractError, MlpParams, NonFiniteGradient, adam_step, mlp_vjp,
                 sample_dropout_masks)
from .nn import compute_normalization_stats, NormalizationStats
from .policy import (ACTION_DIM, EbmPolicy, LangevinConfig, MsePolicy, langevin_refine,
                     sample_uniform_actions)

log = logging.getLogger(__name__)

STREAM_INIT, STREAM_SHUFFLE, STREAM_STEP = 0, 1, 2


def stream_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream, int(index)])


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20000
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    langevin: LangevinConfig = field(default_factory=LangevinConfig)
    infer_langevin: LangevinConfig = field(default_factory=LangevinConfig)
    hidden_dims: tuple[int, ...] = (256, 256)
    activation: str = "relu"
    dropout_rate: float = 0.1
    grad_penalty: bool = False
    grad_margin: float = 1.0
    grad_penalty_weight: float = 1.0
    eval_every: int = 0
    heldout_episodes: int = 8
    checkpoint_dir: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ContractError("steps and batch_size must be >= 1")


def infonce_loss(pos_energy, neg_energies):
    """Cross-entropy of the softmax over negated energies against the expert.

    Returns ``(loss, dloss/dE_pos, dloss/dE_neg)``; inputs may carry a leading
    batch axis (then the loss is per item).
    """
    pos = np.asarray(pos_energy, dtype=np.float64)
    neg = np.asarray(neg_energies, dtype=np.float64)
    if neg.shape[-1] < 1:
        raise ContractError("need at least one negative")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise FloatingPointError("non-finite energy in InfoNCE loss")
    logits = -np.concatenate([pos[..., None], neg], axis=-1)
    loss = pos + logsumexp(logits, axis=-1)
    p = softmax(logits, axis=-1)
    return loss, 1.0 - p[..., 0], -p[..., 1:]


def _add_scaled(a: MlpParams, b: MlpParams, scale: float) -> MlpParams:
    return MlpParams([x + scale * y for x, y in zip(a.weights, b.weights)],
                     [x + scale * y for x, y in zip(a.biases, b.biases)])


def _gradient_penalty(policy: EbmPolicy, x: np.ndarray, margin: float, eps: float = 1e-4):
    """``mean(relu(|grad_a E|_inf - margin)^2)`` and its parameter gradient.

    The mixed second derivative is taken by central differences of the
    parameter gradient along each sample's action-space sensitivity direction.
    """
    d = policy.obs_dim
    cfg, params, stats = policy.config, policy.params, policy.stats
    _, back = mlp_vjp(cfg, params, stats, x)
    _, gx = back(np.ones((len(x), 1)), need_param_grads=False)
    ga = gx[:, d:]
    gmax_idx = np.argmax(np.abs(ga), axis=1)
    gmax = np.abs(ga[np.arange(len(ga)), gmax_idx])
    excess = np.maximum(gmax - margin, 0.0)
    penalty = float(np.mean(excess ** 2))
    if penalty == 0.0:
        return penalty, params.zeros_like()
    # dpenalty / d grad_a, nonzero only on the max-magnitude axis
    v = np.zeros_like(ga)
    v[np.arange(len(ga)), gmax_idx] = (2.0 * excess / len(x)) * np.sign(ga[np.arange(len(ga)), gmax_idx])
    norm = np.linalg.norm(v, axis=1)
    active = norm > 0
    xa = x[active]
    vhat = v[active] / norm[active, None]
    shift = np.zeros_like(xa)
    shift[:, d:] = eps * vhat
    xs = np.concatenate([xa + shift, xa - shift])
    coef = np.concatenate([norm[active], -norm[active]]) / (2.0 * eps)
    _, back2 = mlp_vjp(cfg, params, stats, xs)
    grads, _ = back2(coef[:, None])
    return penalty, grads


def ibc_train_step(policy: EbmPolicy, obs, expert, cfg: TrainConfig, adam: AdamState,
                   rng: np.random.Generator):
    """One InfoNCE update.  Returns ``(policy, adam, loss)``; ``loss`` is NaN
    and nothing changes when the step had to be skipped."""
    obs = np.asarray(obs, dtype=np.float64)
    expert = np.asarray(expert, dtype=np.float64)
    if len(obs) != len(expert) or obs.shape[1] != policy.obs_dim:
        raise ContractError("batch does not match the policy dimensions")
    B = len(obs)
    N = cfg.langevin.n_samples
    obs_rep = np.repeat(obs, N, axis=0)
    init = sample_uniform_actions(policy.bounds, B * N, rng)
    negatives = langevin_refine(policy, obs_rep, init, cfg.langevin, rng, mode="train").actions
    # row layout: item i -> [expert_i, neg_i1 .. neg_iN]
    acts = np.concatenate([expert[:, None, :], negatives.reshape(B, N, ACTION_DIM)], axis=1)
    x = np.concatenate([np.repeat(obs, N + 1, axis=0), acts.reshape(-1, ACTION_DIM)], axis=1)
    masks = None
    if policy.config.dropout_rate > 0:
        masks = sample_dropout_masks(policy.config, len(x), rng)
    energies, backward = mlp_vjp(policy.config, policy.params, policy.stats, x, masks)
    energies = energies[:, 0].reshape(B, N + 1)
    try:
        loss_i, d_pos, d_neg = infonce_loss(energies[:, 0], energies[:, 1:])
    except FloatingPointError:
        log.warning("skipping IBC step: non-finite energies")
        return policy, adam, math.nan
    loss = float(np.mean(loss_i))
    upstream = np.concatenate([d_pos[:, None], d_neg], axis=1).reshape(-1, 1) / B
    grads, _ = backward(upstream)
    if cfg.grad_penalty:
        pen, pen_grads = _gradient_penalty(policy, x, cfg.grad_margin)
        loss += cfg.grad_penalty_weight * pen
        grads = _add_scaled(grads, pen_grads, cfg.grad_penalty_weight)
    if not math.isfinite(loss):
        log.warning("skipping IBC step: non-finite loss")
        return policy, adam, math.nan
    return _apply(policy, grads, adam, loss)


def _apply(policy, grads, adam, loss):
    try:
        new_params, adam = adam_step(policy.params, grads, adam)
    except NonFiniteGradient as exc:
        log.warning("skipping step: %s", exc)
        return policy, adam, math.nan
    return replace(policy, params=new_params), adam, loss


def mse_loss_and_grads(policy: MsePolicy, obs, expert, masks=None):
    pred, backward = mlp_vjp(policy.config, policy.params, policy.stats, obs, masks)
    err = pred - expert
    loss = float(np.mean(err ** 2))
    grads, _ = backward(2.0 * err / err.size)
    return loss, grads


def mse_train_step(policy: MsePolicy, obs, expert, cfg: TrainConfig, adam: AdamState,
                   rng: np.random.Generator | None = None):
    """One regression update on unclipped predictions."""
    obs = np.asarray(obs, dtype=np.float64)
    expert = np.asarray(expert, dtype=np.float64)
    if len(obs) != len(expert) or expert.shape[1] != ACTION_DIM:
        raise ContractError("batch does not match the policy dimensions")
    masks = None
    if policy.config.dropout_rate > 0 and rng is not None:
        masks = sample_dropout_masks(policy.config, len(obs), rng)
    loss, grads = mse_loss_and_grads(policy, obs, expert, masks)
    if not math.isfinite(loss):
        log.warning("skipping MSE step: non-finite loss")
        return policy, adam, math.nan
    return _apply(policy, grads, adam, loss)


def init_policy(kind: str, obs, acts, bounds, cfg: TrainConfig):
    rng = stream_rng(cfg.seed, STREAM_INIT)
    if kind in ("ibc", "ebm"):
        x = np.concatenate([obs, acts], axis=1)
        full = compute_normalization_stats(x, np.zeros((len(x), 1)))
        stats = NormalizationStats(full.input_mean, full.input_std, np.zeros(1), np.ones(1))
        return EbmPolicy.create(obs.shape[1], bounds, rng, cfg.hidden_dims, cfg.activation,
                                cfg.dropout_rate, stats, cfg.infer_langevin)
    if kind == "mse":
        stats = compute_normalization_stats(obs, acts)
        return MsePolicy.create(obs.shape[1], bounds, rng, cfg.hidden_dims, cfg.activation,
                                cfg.dropout_rate, stats)
    raise ContractError(f"unknown policy kind {kind!r}")


def batch_indices(n: int, cfg: TrainConfig, step: int) -> np.ndarray:
    """Rows of training step ``step`` (1-based): seeded per-epoch shuffles."""
    bs = min(cfg.batch_size, n)
    per_epoch = n // bs
    epoch, k = divmod(step - 1, per_epoch)
    perm = stream_rng(cfg.seed, STREAM_SHUFFLE, epoch).permutation(n)
    return perm[k * bs:(k + 1) * bs]


@dataclass
class TrainResult:
    policy: object
    adam: AdamState
    log: list[dict]
    skipped: int = 0


def train(kind: str, train_episodes, cfg: TrainConfig, heldout_episodes=None, env_cfg=None,
          log_path=None, resume=None, progress=None) -> TrainResult:
    """Train an ``"ibc"`` or ``"mse"`` policy on the given episodes.

    Every ``eval_every`` steps a checkpoint is written to ``checkpoint_dir``
    (when set) and, if held-out episodes are given, the ASM on up to
    ``heldout_episodes`` of them is logged.
    """
    if not train_episodes:
        raise ContractError("empty training split")
    obs, acts = transitions(train_episodes)
    if resume is not None:
        policy, adam, start = load_policy(resume, expect_kind="ebm" if kind == "ibc" else kind,
                                          with_train_state=True)
    else:
        bounds = action_bounds(train_episodes)
        policy = init_policy(kind, obs, acts, bounds, cfg)
        adam = AdamState.zeros(policy.params, lr=cfg.learning_rate, beta1=cfg.beta1,
                               beta2=cfg.beta2)
        start = 0
    step_fn = ibc_train_step if kind in ("ibc", "ebm") else mse_train_step
    rows = []
    skipped = 0
    writer = fh = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        fh = log_path.open("a" if resume is not None else "w", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        if resume is None:
            writer.writerow(["step", "loss", "heldout_asm"])
    try:
        for step in range(start + 1, cfg.steps + 1):
            idx = batch_indices(len(obs), cfg, step)
            rng = stream_rng(cfg.seed, STREAM_STEP, step)
            policy, adam, loss = step_fn(policy, obs[idx], acts[idx], cfg, adam, rng)
            if not math.isfinite(loss):
                skipped += 1
            asm = None
            periodic = cfg.eval_every > 0 and step % cfg.eval_every == 0
            if periodic and heldout_episodes:
                from .evaluate import heldout_asm
                asm = heldout_asm(policy, heldout_episodes[:cfg.heldout_episodes], env_cfg,
                                  seed=cfg.seed)
            if periodic and cfg.checkpoint_dir:
                save_policy(policy, Path(cfg.checkpoint_dir) / f"step_{step:07d}.npz", adam, step)
            row = {"step": step, "loss": loss, "heldout_asm": asm}
            rows.append(row)
            if writer is not None:
                writer.writerow([step, repr(loss), "" if asm is None else repr(asm)])
            if progress is not None:
                progress(row)
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(policy, adam, rows, skipped)
