import csv
import json
from dataclasses import dataclass

import numpy as np
import pytest

from gazeibc import cli
from gazeibc.config import ConfigError, load_config, parse_config_text
from gazeibc.policy import MsePolicy

TINY = ["--set", "data.length=200", "--set", "train.hidden_dims=8",
        "--set", "train.batch_size=16", "--set", "langevin.n_mcmc=3",
        "--set", "langevin.n_samples=4", "--set", "inference.n_mcmc=5",
        "--set", "inference.n_samples=4"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert cli.run(["gen-data", "--out", str(data), "--sessions", "7", "--seed", "4", *TINY]) == 0
    for kind in ("ibc", "mse"):
        rc = cli.run(["train", "--data", str(data), "--policy", kind, "--steps", "3",
                      "--out", str(root / f"{kind}.npz"), "--log", str(root / f"{kind}.log"),
                      "--seed", "4", *TINY])
        assert rc == 0
    return root


# --- config -----------------------------------------------------------------

def test_config_file_and_overrides(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\ntrain.steps = 50\ntrain.hidden_dims = 32, 16\n"
                 "data.include_prev_action = yes\n")
    cfg = load_config(f, ["train.steps=7", "run.seed=3"])
    assert cfg["train.steps"] == 7
    assert cfg["train.hidden_dims"] == (32, 16)
    assert cfg["data.include_prev_action"] is True
    assert cfg.seed("train") == 3
    assert load_config(None, ["train.seed=9"]).seed("train") == 9


@pytest.mark.parametrize("text", ["train.nope = 1", "bogus.steps = 1", "train.steps = many",
                                  "data.scenario = circus", "eval.metrics = asm, speed",
                                  "data.types = teacher, pianist"])
def test_config_rejects_bad_values(text):
    with pytest.raises(ConfigError):
        load_config(None, [text.replace(" = ", "=")])
    if "metrics" not in text and "types" not in text:
        with pytest.raises(ConfigError):
            parse_config_text(text)


def test_config_digest_stable():
    assert load_config(None, ["run.seed=1"]).digest() == load_config(None, ["run.seed=1"]).digest()
    assert load_config(None, ["run.seed=1"]).digest() != load_config(None, ["run.seed=2"]).digest()


# --- gen-data ---------------------------------------------------------------

def test_gen_data_outputs(workspace):
    data = workspace / "data"
    csvs = sorted(p for p in data.glob("session_*.csv"))
    assert len(csvs) == 7
    manifest = list(csv.DictReader((data / "manifest.csv").open()))
    assert len(manifest) == 7 and {m["seed"] for m in manifest} == {"4"}
    header = csvs[0].read_text().splitlines()[0].split(",")
    # frame column plus yaw/pitch for the facilitator and 5 participants
    assert len(header) == 1 + 2 * 6
    run = json.loads((data / "run_manifest.json").read_text())
    assert run["seed"] == 4 and "config_sha256" in run


def test_gen_data_is_byte_identical_and_needs_force(tmp_path):
    args = ["gen-data", "--sessions", "2", "--seed", "1", *TINY]
    assert cli.run([*args, "--out", str(tmp_path / "a")]) == 0
    assert cli.run([*args, "--out", str(tmp_path / "b")]) == 0
    for f in ("session_000.csv", "session_001.csv", "manifest.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert cli.run([*args, "--out", str(tmp_path / "a")]) == 1
    assert cli.run([*args, "--out", str(tmp_path / "a"), "--force"]) == 0


# --- train ------------------------------------------------------------------

def test_train_uses_fold_one_split(workspace):
    meta = json.loads((workspace / "ibc.run.json").read_text())
    assert len(meta["train_sessions"]) == 4
    rows = (workspace / "mse.log").read_text().splitlines()
    assert len(rows) == 1 + 3


def test_train_seed_reproducible(workspace, tmp_path, capsys):
    outs = []
    for name in ("x", "y"):
        capsys.readouterr()
        assert cli.run(["train", "--data", str(workspace / "data"), "--policy", "ibc", "--steps", "2",
                        "--out", str(tmp_path / f"{name}.npz"), "--seed", "8", *TINY]) == 0
        outs.append([l for l in capsys.readouterr().out.splitlines() if l.startswith("final loss")])
    assert outs[0] == outs[1] and outs[0]


def test_train_validation_errors(workspace, tmp_path):
    data = str(workspace / "data")
    assert cli.run(["train", "--data", data, "--out", str(tmp_path / "c.npz"),
                    "--set", "train.wat=1"]) == 1
    assert cli.run(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "c.npz")]) == 1
    assert cli.run(["train", "--data", data, "--out", str(tmp_path / "c.npz"),
                    "--resume", str(tmp_path / "missing.npz")]) == 1


# --- eval / report / rollout ------------------------------------------------

def test_eval_both_policies_one_table(workspace, capsys):
    out = workspace / "eval_both"
    rc = cli.run(["eval", "--data", str(workspace / "data"), "--ibc", str(workspace / "ibc.npz"),
                  "--mse", str(workspace / "mse.npz"), "--out", str(out), "--seed", "4", *TINY])
    assert rc == 0
    text = (out / "report.txt").read_text()
    assert "Implicit BC" in text and "Explicit BC" in text
    assert "Implicit BC" in capsys.readouterr().out
    header = (out / "report.csv").read_text().splitlines()[0]
    assert "r2_yaw" in header and "sparc_pitch" in header


def test_eval_metrics_filter(workspace):
    out = workspace / "eval_asm"
    rc = cli.run(["eval", "--data", str(workspace / "data"), "--mse", str(workspace / "mse.npz"),
                  "--metrics", "asm", "--out", str(out), *TINY])
    assert rc == 0
    header = (out / "report.csv").read_text().splitlines()[0].split(",")
    assert "asm" in header and not any(h.startswith(("r2", "sparc")) for h in header)
    assert "SPARC" not in (out / "report.txt").read_text()


def test_eval_kind_mismatch(workspace, tmp_path):
    rc = cli.run(["eval", "--data", str(workspace / "data"), "--ibc", str(workspace / "mse.npz"),
                  "--out", str(tmp_path / "r")])
    assert rc == 1
    assert not (tmp_path / "r").exists()


@dataclass
class _NanPolicy(MsePolicy):
    def as_fn(self, rng=None):
        return lambda obs: np.array([np.nan, np.nan])


def test_eval_exit_code_on_aborted_rollouts(workspace, tmp_path, monkeypatch):
    real = cli.load_policy

    def broken(path, expect_kind=None):
        p = real(path, expect_kind=expect_kind)
        return _NanPolicy(p.config, p.params, p.stats, p.bounds)

    monkeypatch.setattr(cli, "load_policy", broken)
    rc = cli.run(["eval", "--data", str(workspace / "data"), "--mse", str(workspace / "mse.npz"),
                  "--metrics", "asm", "--out", str(tmp_path / "r"), *TINY])
    assert rc == 2


def test_report_rerender(workspace, tmp_path):
    src = tmp_path / "ev"
    assert cli.run(["eval", "--data", str(workspace / "data"), "--mse", str(workspace / "mse.npz"),
                    "--out", str(src), *TINY]) == 0
    assert cli.run(["report", str(src / "report.csv"), "--out", str(tmp_path / "t.txt")]) == 0
    assert (tmp_path / "t.txt").read_text() == (src / "report.txt").read_text()
    assert cli.run(["report", str(tmp_path / "missing.csv")]) == 3


def test_rollout_dump(workspace, tmp_path):
    out = tmp_path / "traj.csv"
    rc = cli.run(["rollout", "--data", str(workspace / "data"), "--checkpoint",
                  str(workspace / "mse.npz"), "--session", "session_006", "--start", "50",
                  "--out", str(out), *TINY])
    assert rc == 0
    assert out.read_text().startswith("step,gaze_yaw")
    assert cli.run(["rollout", "--data", str(workspace / "data"), "--checkpoint",
                    str(workspace / "mse.npz"), "--session", "nope", "--out", str(out)]) == 1
