"""Run configuration: flat ``section.key = value`` files with a fixed schema.

Example::

    data.scenario = attend_speaker
    data.sessions = 8
    train.policy = ibc
    train.hidden_dims = 64, 64
    langevin.n_mcmc = 15

Unknown keys are rejected.  Values given on the command line (``--set
section.key=value`` or dedicated flags) override the file.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .data import FACILITATOR_TYPES
from .synthetic import SCENARIOS


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.replace(" ", "").split(",") if p)


def _words(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _choice(*options):
    def parse(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"{t!r} is not one of {', '.join(options)}")
        return t
    return parse


def _opt_int(text: str):
    return None if text.strip().lower() in ("", "none") else int(text)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any


SCHEMA: dict[str, dict[str, Key]] = {
    "run": {"seed": Key(int, 0)},
    "data": {
        "source": Key(_choice("synthetic", "files"), "synthetic"),
        "P": Key(int, 5),
        "sessions": Key(int, 7),
        "length": Key(int, 3000),
        "scenario": Key(_choice(*SCENARIOS), "attend_speaker"),
        "types": Key(_words, ("synthetic",)),
        "noise_std": Key(float, 0.01),
        "include_prev_action": Key(_bool, False),
        "seed": Key(_opt_int, None),
    },
    "train": {
        "policy": Key(_choice("ibc", "mse"), "ibc"),
        "fold": Key(int, 1),
        "steps": Key(int, 20000),
        "batch_size": Key(int, 128),
        "learning_rate": Key(float, 1e-3),
        "beta1": Key(float, 0.9),
        "beta2": Key(float, 0.999),
        "hidden_dims": Key(_ints, (256, 256)),
        "activation": Key(_choice("relu", "tanh"), "relu"),
        "dropout_rate": Key(float, 0.1),
        "eval_every": Key(int, 0),
        "heldout_episodes": Key(int, 8),
        "grad_penalty": Key(_bool, False),
        "grad_margin": Key(float, 1.0),
        "grad_penalty_weight": Key(float, 1.0),
        "seed": Key(_opt_int, None),
    },
    "langevin": {
        "n_mcmc": Key(int, 100),
        "n_samples": Key(int, 64),
        "eta_init": Key(float, 0.1),
        "eta_final": Key(float, 1e-3),
        "decay": Key(float, 2.0),
        "noise_scale": Key(float, 0.1),
        "grad_clip": Key(float, 1.0),
    },
    "inference": {
        "n_mcmc": Key(int, 100),
        "n_samples": Key(int, 64),
        "eta_init": Key(float, 0.1),
        "eta_final": Key(float, 1e-3),
        "decay": Key(float, 2.0),
        "noise_scale": Key(float, 0.1),
        "grad_clip": Key(float, 1.0),
    },
    "env": {
        "dt": Key(float, 1.0 / 30.0),
        "kp": Key(float, 900.0),
        "kd": Key(float, 30.0),
        "max_steps": Key(int, 100),
        "success_threshold": Key(float, 0.02),
        "action_limit": Key(float, 1.5707963267948966),
    },
    "eval": {
        "sample_rate": Key(float, 30.0),
        "padding_level": Key(int, 4),
        "cutoff_freq": Key(float, 10.0),
        "amplitude_threshold": Key(float, 0.05),
        "folds": Key(str, ""),
        "fold": Key(int, 1),
        "metrics": Key(_words, ("asm", "r2", "sparc")),
        "jobs": Key(int, 1),
        "seed": Key(_opt_int, None),
    },
    "io": {
        "data_dir": Key(str, ""),
        "out": Key(str, ""),
        "log": Key(str, ""),
        "checkpoint_dir": Key(str, ""),
    },
}


class RunConfig:
    """Resolved configuration: ``cfg["train.steps"]`` or ``cfg.section("train")``."""

    def __init__(self, values: dict[str, Any]):
        self._values = dict(values)

    def __getitem__(self, dotted: str):
        return self._values[dotted]

    def section(self, name: str) -> dict[str, Any]:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self._values.items() if k.startswith(prefix)}

    def seed(self, section: str) -> int:
        own = self._values.get(f"{section}.seed")
        return self._values["run.seed"] if own is None else own

    def as_dict(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self._values.items())}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.as_dict(), sort_keys=True).encode()).hexdigest()


def _set(values: dict, dotted: str, text: str, origin: str) -> None:
    section, _, key = dotted.strip().partition(".")
    if section not in SCHEMA or key not in SCHEMA[section]:
        raise ConfigError(f"{origin}: unknown key {dotted.strip()!r}")
    try:
        values[f"{section}.{key}"] = SCHEMA[section][key].parse(text.strip())
    except ValueError as exc:
        raise ConfigError(f"{origin}: bad value for {dotted.strip()}: {exc}") from exc


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, Any]:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[root]\n" + text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from exc
    values: dict[str, Any] = {}
    for dotted, raw in parser["root"].items():
        _set(values, dotted, raw, origin)
    return values


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``section.key=value`` overrides."""
    values = {f"{s}.{k}": key.default for s, keys in SCHEMA.items() for k, key in keys.items()}
    if path:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot read config {p}: {exc}") from exc
        values.update(parse_config_text(text, str(p)))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        dotted, text = item.split("=", 1)
        _set(values, dotted, text, "--set")
    cfg = RunConfig(values)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    bad = [t for t in cfg["data.types"] if t not in FACILITATOR_TYPES]
    if bad:
        raise ConfigError(f"data.types: unknown facilitator types {bad}")
    if cfg["data.P"] < 1 or cfg["data.sessions"] < 1:
        raise ConfigError("data.P and data.sessions must be >= 1")
    bad = [m for m in cfg["eval.metrics"] if m not in ("asm", "r2", "sparc")]
    if bad or not cfg["eval.metrics"]:
        raise ConfigError(f"eval.metrics: expected a subset of asm, r2, sparc, got {cfg['eval.metrics']}")
    if cfg["eval.jobs"] < 1:
        raise ConfigError("eval.jobs must be >= 1")
    if cfg["eval.folds"] and not Path(cfg["eval.folds"]).is_file():
        raise ConfigError(f"eval.folds: no such file {cfg['eval.folds']}")
