"""Command-line interface: ``gazeibc {gen-data,train,eval,rollout,report}``.

Exit codes: 0 success, 1 validation error, 2 runtime error (including
aborted rollouts during ``eval``), 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import FORMAT_VERSION as CHECKPOINT_FORMAT
from .checkpoint import CheckpointError, load_policy, save_policy
from .config import ConfigError, RunConfig, load_config
from .data import (DataError, FoldSpec, Session, default_fold_spec, extract_episodes,
                   load_session, split_folds, write_session)
from .env import EnvConfig, rollout, write_trajectory
from .evaluate import (ReportError, emit_report, evaluate, read_report_csv,
                       render_text_table)
from .metrics import SparcConfig
from .nn import ContractError
from .policy import LangevinConfig
from .synthetic import SyntheticConfig, generate_synthetic_session
from .train import TrainConfig, train

log = logging.getLogger("gazeibc")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3
MANIFEST = "manifest.csv"
FOLDS = "folds.csv"
REPORT_FORMAT = 1
SESSION_FORMAT = 1


class ValidationError(Exception):
    pass


# --- helpers ---------------------------------------------------------------

def _session_name(i: int) -> str:
    return f"session_{i:03d}"


def _write_run_manifest(path: Path, command: str, cfg: RunConfig, extra=None) -> None:
    doc = {
        "command": command,
        "seed": cfg["run.seed"],
        "config_sha256": cfg.digest(),
        "config": cfg.as_dict(),
        "format_versions": {"session_csv": SESSION_FORMAT, "checkpoint": CHECKPOINT_FORMAT,
                            "report_csv": REPORT_FORMAT},
        "package_version": __version__,
    }
    doc.update(extra or {})
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require_dir(text: str, what: str) -> Path:
    if not text:
        raise ValidationError(f"{what} is not set")
    p = Path(text)
    if not p.is_dir():
        raise ValidationError(f"{what}: no such directory {p}")
    return p


def read_manifest(data_dir: Path) -> list[dict]:
    path = data_dir / MANIFEST
    if not path.is_file():
        raise ValidationError(f"{path}: dataset manifest not found")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for i, row in enumerate(rows, start=2):
        if not row.get("session_id") or not row.get("file"):
            raise ValidationError(f"{path}:{i}: need session_id and file")
        if not (data_dir / row["file"]).is_file():
            raise ValidationError(f"{path}:{i}: missing session file {row['file']}")
    return rows


def load_dataset(cfg: RunConfig, data_dir: Path) -> list[Session]:
    sessions = []
    for row in read_manifest(data_dir):
        sessions.append(load_session(data_dir / row["file"], cfg["data.P"],
                                     row.get("facilitator_type") or "synthetic",
                                     session_id=row["session_id"]))
    return sessions


def fold_split(cfg: RunConfig, data_dir: Path, sessions, fold: int):
    if cfg["eval.folds"]:
        spec = FoldSpec.read(cfg["eval.folds"])
    elif (data_dir / FOLDS).is_file():
        spec = FoldSpec.read(data_dir / FOLDS)
    else:
        spec = default_fold_spec([s.session_id for s in sessions])
    folds = split_folds(sessions, spec)
    if fold not in folds:
        raise ValidationError(f"fold {fold} not defined (have {sorted(folds)})")
    return folds[fold]


def episodes_of(cfg: RunConfig, sessions):
    return [e for s in sessions
            for e in extract_episodes(s, include_prev_action=cfg["data.include_prev_action"])]


def langevin_config(cfg: RunConfig, section: str) -> LangevinConfig:
    return LangevinConfig(**cfg.section(section))


def train_config(cfg: RunConfig) -> TrainConfig:
    t = cfg.section("train")
    return TrainConfig(
        steps=t["steps"], batch_size=t["batch_size"], learning_rate=t["learning_rate"],
        beta1=t["beta1"], beta2=t["beta2"], langevin=langevin_config(cfg, "langevin"),
        infer_langevin=langevin_config(cfg, "inference"), hidden_dims=t["hidden_dims"],
        activation=t["activation"], dropout_rate=t["dropout_rate"],
        grad_penalty=t["grad_penalty"], grad_margin=t["grad_margin"],
        grad_penalty_weight=t["grad_penalty_weight"], eval_every=t["eval_every"],
        heldout_episodes=t["heldout_episodes"], checkpoint_dir=cfg["io.checkpoint_dir"] or None,
        seed=cfg.seed("train"))


def env_config(cfg: RunConfig) -> EnvConfig:
    return EnvConfig(**cfg.section("env"))


def sparc_config(cfg: RunConfig) -> SparcConfig:
    e = cfg.section("eval")
    return SparcConfig(e["sample_rate"], e["padding_level"], e["cutoff_freq"],
                       e["amplitude_threshold"])


# --- commands --------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig, out: Path, force: bool = False) -> list[Path]:
    if cfg["data.source"] != "synthetic":
        raise ValidationError("gen-data only generates synthetic sessions (data.source = synthetic)")
    n = cfg["data.sessions"]
    types = cfg["data.types"]
    scfgs = [SyntheticConfig(n_participants=cfg["data.P"], length=cfg["data.length"],
                             scenario=cfg["data.scenario"], noise_std=cfg["data.noise_std"],
                             facilitator_type=types[i % len(types)]) for i in range(n)]
    names = [_session_name(i) for i in range(n)]
    targets = [out / f"{s}.csv" for s in names] + [out / MANIFEST, out / FOLDS]
    existing = [p for p in targets if p.exists()]
    if existing and not force:
        raise ValidationError(f"{existing[0]} exists; use --force to overwrite")
    seed = cfg.seed("data")
    out.mkdir(parents=True, exist_ok=True)
    for i, (sid, scfg) in enumerate(zip(names, scfgs)):
        session = generate_synthetic_session(scfg, np.random.default_rng([seed, i]), sid)
        write_session(session, out / f"{sid}.csv")
    with (out / MANIFEST).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["session_id", "file", "facilitator_type", "scenario", "seed", "frames"])
        for sid, scfg in zip(names, scfgs):
            w.writerow([sid, f"{sid}.csv", scfg.facilitator_type, scfg.scenario, seed, scfg.length])
    default_fold_spec(names).write(out / FOLDS)
    _write_run_manifest(out / "run_manifest.json", "gen-data", cfg)
    return targets


def cmd_train(cfg: RunConfig, data_dir: Path, out: Path, log_path: Path | None = None,
              resume: Path | None = None):
    sessions = load_dataset(cfg, data_dir)
    train_s, test_s = fold_split(cfg, data_dir, sessions, cfg["train.fold"])
    tcfg = train_config(cfg)
    train_eps = episodes_of(cfg, train_s)
    if not train_eps:
        raise ValidationError("training split has no episodes")
    heldout = episodes_of(cfg, test_s) if tcfg.eval_every > 0 else None
    result = train(cfg["train.policy"], train_eps, tcfg, heldout, env_config(cfg), log_path,
                   resume)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_policy(result.policy, out, result.adam, result.adam.step)
    _write_run_manifest(out.with_suffix(".run.json"), "train", cfg,
                        {"fold": cfg["train.fold"], "train_sessions": [s.session_id for s in train_s],
                         "skipped_steps": result.skipped})
    return result


def _load_for_eval(path: str, kind: str, cfg: RunConfig):
    policy = load_policy(path, expect_kind=kind)
    if kind == "ebm":
        policy.langevin = langevin_config(cfg, "inference")
    return policy


def cmd_eval(cfg: RunConfig, data_dir: Path, out: Path, ibc: str | None, mse: str | None,
             plot_data: bool = False):
    policies = {}
    if ibc:
        policies["ibc"] = _load_for_eval(ibc, "ebm", cfg)
    if mse:
        policies["mse"] = _load_for_eval(mse, "mse", cfg)
    if not policies:
        raise ValidationError("eval needs --ibc and/or --mse")
    sessions = load_dataset(cfg, data_dir)
    _, test_s = fold_split(cfg, data_dir, sessions, cfg["eval.fold"])
    episodes = episodes_of(cfg, test_s)
    if not episodes:
        raise ValidationError("test split has no episodes")
    for name, p in policies.items():
        if p.obs_dim != episodes[0].obs_dim:
            raise ValidationError(f"{name} checkpoint expects observations of width {p.obs_dim}, "
                                  f"data has {episodes[0].obs_dim}")
    report = evaluate(policies, episodes, env_config(cfg), sparc_config(cfg),
                      cfg["eval.metrics"], cfg.seed("eval"), cfg["eval.jobs"],
                      keep_trajectories=plot_data)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(report, "csv", out / "report.csv")
    emit_report(report, "text_table", out / "report.txt")
    if plot_data:
        emit_report(report, "plot_data", out / "trajectories")
    _write_run_manifest(out / "run_manifest.json", "eval", cfg,
                        {"fold": cfg["eval.fold"], "checkpoints": {"ibc": ibc, "mse": mse}})
    return report


def cmd_rollout(cfg: RunConfig, data_dir: Path, checkpoint: str, session_id: str, start: int,
                out: Path):
    policy = load_policy(checkpoint)
    if policy.kind == "ebm":
        policy.langevin = langevin_config(cfg, "inference")
    sessions = {s.session_id: s for s in load_dataset(cfg, data_dir)}
    if session_id not in sessions:
        raise ValidationError(f"unknown session {session_id!r}")
    eps = {e.start: e for e in episodes_of(cfg, [sessions[session_id]])}
    if start not in eps:
        raise ValidationError(f"no episode starts at frame {start} (have {sorted(eps)[:5]}...)")
    traj = rollout(policy.as_fn(np.random.default_rng([cfg.seed("eval"), start])), eps[start],
                   env_config(cfg))
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trajectory(traj, out)
    return traj


# --- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat section.key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value (repeatable)")
    common.add_argument("--seed", type=int, help="base seed for every random stream")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gazeibc", description="Implicit vs explicit behavior "
                                "cloning of facilitator gaze.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write synthetic sessions")
    g.add_argument("--out", help="output directory (io.data_dir)")
    g.add_argument("--sessions", type=int)
    g.add_argument("--scenario")
    g.add_argument("--force", action="store_true", help="overwrite existing files")

    t = sub.add_parser("train", parents=[common], help="train a policy")
    t.add_argument("--data", help="dataset directory (io.data_dir)")
    t.add_argument("--policy", choices=("ibc", "mse"))
    t.add_argument("--fold", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--out", help="checkpoint path (io.out)")
    t.add_argument("--log", help="training log CSV (io.log)")
    t.add_argument("--resume", help="checkpoint to resume from")

    e = sub.add_parser("eval", parents=[common], help="evaluate checkpoints on a test fold")
    e.add_argument("--data")
    e.add_argument("--ibc", help="IBC (energy model) checkpoint")
    e.add_argument("--mse", help="MSE checkpoint")
    e.add_argument("--fold", type=int)
    e.add_argument("--metrics", help="comma list from asm,r2,sparc")
    e.add_argument("--jobs", type=int)
    e.add_argument("--out", help="report directory (io.out)")
    e.add_argument("--plot-data", action="store_true", help="also write per-episode trajectories")

    r = sub.add_parser("rollout", parents=[common], help="dump one episode rollout")
    r.add_argument("--data")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--session", required=True)
    r.add_argument("--start", type=int, default=0)
    r.add_argument("--out", required=True)

    rep = sub.add_parser("report", help="re-render a report CSV as a text table")
    rep.add_argument("csv")
    rep.add_argument("--out", help="write the table here instead of stdout")
    return p


_FLAG_KEYS = {"sessions": "data.sessions", "scenario": "data.scenario", "policy": "train.policy",
              "steps": "train.steps", "metrics": "eval.metrics", "jobs": "eval.jobs"}


def _resolve(args) -> RunConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    for flag, key in _FLAG_KEYS.items():
        val = getattr(args, flag, None)
        if val is not None:
            overrides.append(f"{key}={val}")
    if getattr(args, "fold", None) is not None:
        overrides.append(f"{'train' if args.command == 'train' else 'eval'}.fold={args.fold}")
    for flag, key in (("data", "io.data_dir"), ("log", "io.log")):
        val = getattr(args, flag, None)
        if val is not None:
            overrides.append(f"{key}={val}")
    out = getattr(args, "out", None)
    if out is not None and args.command != "rollout":
        overrides.append(f"{'io.data_dir' if args.command == 'gen-data' else 'io.out'}={out}")
    return load_config(args.config, overrides)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            report = read_report_csv(args.csv)
            text = render_text_table(report)
            if args.out:
                Path(args.out).write_text(text, encoding="utf-8")
            else:
                sys.stdout.write(text)
            return EXIT_OK
        cfg = _resolve(args)
        if args.command == "gen-data":
            if not cfg["io.data_dir"]:
                raise ValidationError("gen-data needs --out or io.data_dir")
            cmd_gen_data(cfg, Path(cfg["io.data_dir"]), args.force)
        elif args.command == "train":
            data_dir = _require_dir(cfg["io.data_dir"], "io.data_dir")
            if not cfg["io.out"]:
                raise ValidationError("train needs --out or io.out")
            if args.resume and not Path(args.resume).is_file():
                raise ValidationError(f"--resume: no such checkpoint {args.resume}")
            result = cmd_train(cfg, data_dir, Path(cfg["io.out"]),
                               Path(cfg["io.log"]) if cfg["io.log"] else None,
                               Path(args.resume) if args.resume else None)
            if result.log:
                print(f"final loss {result.log[-1]['loss']!r}")
        elif args.command == "eval":
            data_dir = _require_dir(cfg["io.data_dir"], "io.data_dir")
            if not cfg["io.out"]:
                raise ValidationError("eval needs --out or io.out")
            for path in (args.ibc, args.mse):
                if path and not Path(path).is_file():
                    raise ValidationError(f"no such checkpoint {path}")
            report = cmd_eval(cfg, data_dir, Path(cfg["io.out"]), args.ibc, args.mse,
                              args.plot_data)
            sys.stdout.write(render_text_table(report))
            if report.aborted:
                print(f"error: {report.aborted} episode rollout(s) aborted", file=sys.stderr)
                return EXIT_RUNTIME
        elif args.command == "rollout":
            data_dir = _require_dir(cfg["io.data_dir"], "io.data_dir")
            traj = cmd_rollout(cfg, data_dir, args.checkpoint, args.session, args.start,
                               Path(args.out))
            if traj.aborted:
                print(f"error: {traj.error}", file=sys.stderr)
                return EXIT_RUNTIME
        return EXIT_OK
    except (ValidationError, ConfigError, CheckpointError, DataError, ReportError,
            ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())
