"""Policy checkpoints.

A checkpoint is a numpy ``.npz`` archive of little-endian float64 arrays:

========================  ==============================================
key                       content
========================  ==============================================
``meta``                  JSON text: ``format_version``, ``kind`` (ebm|mse),
                          ``mlp`` config, ``langevin`` (ebm only),
                          optional ``train`` state (step, Adam hyper-params)
``W{i}``, ``b{i}``        layer weights (fan_in, fan_out) and biases
``in_mean``, ``in_std``   input normalization
``out_mean``, ``out_std`` output normalization
``bounds_low/high``       dataset action bounds (yaw, pitch)
``adam_{m,v}{W,b}{i}``    Adam moments, present when saved for resuming
========================  ==============================================
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .data import ActionBounds
from .nn import AdamState, MlpConfig, MlpParams, NormalizationStats
from .policy import EbmPolicy, LangevinConfig, MsePolicy

FORMAT_VERSION = 1
LE = "<f8"


class CheckpointError(RuntimeError):
    pass


def save_policy(policy, path, adam: AdamState | None = None, step: int | None = None) -> Path:
    path = Path(path)
    cfg = policy.config
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": policy.kind,
        "mlp": {"input_dim": cfg.input_dim, "hidden_dims": list(cfg.hidden_dims),
                "output_dim": cfg.output_dim, "activation": cfg.activation,
                "dropout_rate": cfg.dropout_rate},
    }
    if isinstance(policy, EbmPolicy):
        meta["langevin"] = asdict(policy.langevin)
    arrays = {}
    for i, (w, b) in enumerate(zip(policy.params.weights, policy.params.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    st = policy.stats
    arrays.update(in_mean=st.input_mean, in_std=st.input_std,
                  out_mean=st.output_mean, out_std=st.output_std,
                  bounds_low=policy.bounds.low, bounds_high=policy.bounds.high)
    if adam is not None:
        meta["train"] = {"step": int(step if step is not None else adam.step),
                         "adam_step": adam.step, "lr": adam.lr, "beta1": adam.beta1,
                         "beta2": adam.beta2, "eps": adam.eps}
        for tag, moments in (("m", adam.m), ("v", adam.v)):
            for i, (w, b) in enumerate(zip(moments.weights, moments.biases)):
                arrays[f"adam_{tag}W{i}"] = w
                arrays[f"adam_{tag}b{i}"] = b
    arrays = {k: np.asarray(v, dtype=LE) for k, v in arrays.items()}
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return path


def load_policy(path, expect_kind: str | None = None, with_train_state: bool = False):
    """Load a policy; optionally also ``(adam_state, step)`` for resuming."""
    path = Path(path)
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    with archive as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {meta.get('format_version')}")
        kind = meta["kind"]
        if expect_kind is not None and kind != expect_kind:
            raise CheckpointError(f"{path}: checkpoint holds a {kind!r} policy, expected {expect_kind!r}")
        m = meta["mlp"]
        cfg = MlpConfig(m["input_dim"], tuple(m["hidden_dims"]), m["output_dim"],
                        m["activation"], m["dropout_rate"])
        n_layers = len(cfg.layer_dims)
        params = MlpParams([np.array(z[f"W{i}"]) for i in range(n_layers)],
                           [np.array(z[f"b{i}"]) for i in range(n_layers)])
        stats = NormalizationStats(np.array(z["in_mean"]), np.array(z["in_std"]),
                                   np.array(z["out_mean"]), np.array(z["out_std"]))
        bounds = ActionBounds(np.array(z["bounds_low"]), np.array(z["bounds_high"]))
        if kind == "ebm":
            policy = EbmPolicy(cfg, params, stats, bounds, LangevinConfig(**meta["langevin"]))
        elif kind == "mse":
            policy = MsePolicy(cfg, params, stats, bounds)
        else:
            raise CheckpointError(f"{path}: unknown policy kind {kind!r}")
        if not with_train_state:
            return policy
        tr = meta.get("train")
        if tr is None:
            raise CheckpointError(f"{path}: no training state stored")
        moments = {}
        for tag in ("m", "v"):
            moments[tag] = MlpParams([np.array(z[f"adam_{tag}W{i}"]) for i in range(n_layers)],
                                     [np.array(z[f"adam_{tag}b{i}"]) for i in range(n_layers)])
        adam = AdamState(moments["m"], moments["v"], tr["adam_step"], tr["lr"],
                         tr["beta1"], tr["beta2"], tr["eps"])
        return policy, adam, tr["step"]
