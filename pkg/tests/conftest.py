import numpy as np
import pytest

from gazeibc.data import ActionBounds, Episode, Session, compute_velocities
from gazeibc.nn import MlpConfig, MlpParams, NormalizationStats, init_params


def random_mlp(rng, input_dim=None, output_dim=None, activation=None, max_width=16):
    """Random config, params and non-trivial normalization stats."""
    n_hidden = int(rng.integers(1, 4))
    cfg = MlpConfig(
        input_dim=input_dim or int(rng.integers(1, max_width + 1)),
        hidden_dims=tuple(int(h) for h in rng.integers(1, max_width + 1, n_hidden)),
        output_dim=output_dim or int(rng.integers(1, 4)),
        activation=activation or str(rng.choice(["relu", "tanh"])),
        dropout_rate=float(rng.uniform(0.0, 0.5)),
    )
    params = init_params(cfg, rng)
    params = MlpParams([w for w in params.weights],
                       [rng.normal(0, 0.3, b.shape) for b in params.biases])
    stats = NormalizationStats(rng.normal(size=cfg.input_dim), rng.uniform(0.5, 2.0, cfg.input_dim),
                               rng.normal(size=cfg.output_dim), rng.uniform(0.5, 2.0, cfg.output_dim))
    return cfg, params, stats


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rel=1e-5, floor=1e-8):
    err = np.abs(analytic - numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    bad = err > rel * scale + floor
    assert not bad.any(), f"max rel err {np.max(err / scale):.3e}"


def make_episode(facilitator, participants=None, fps=30.0, ftype="synthetic", sid="s"):
    fac = np.asarray(facilitator, dtype=np.float64)
    if participants is None:
        participants = np.zeros((len(fac), 2, 2))
    sess = compute_velocities(Session(fac, np.asarray(participants, dtype=np.float64), fps, ftype, sid))
    return Episode(fac, sess.velocity, sess.participants, fac[-1].copy(), ftype, sid, 0, False, fps)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_bounds():
    return ActionBounds(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))


# --- acceptance summary -----------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    """Remember (and print) one pass/fail line for an acceptance criterion."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
