import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gazeibc.env import (TRAJECTORY_COLUMNS, EnvConfig, EnvError, check_success, env_reset,
                         env_step, pd_update, rollout, write_trajectory)
from gazeibc.synthetic import SyntheticConfig, generate_synthetic_session
from gazeibc.data import extract_episodes

from conftest import make_episode

SPEC_GAINS = EnvConfig(kp=100.0, kd=20.0)


def _line(start, goal, n=50):
    return make_episode(np.linspace(start, goal, n))


def test_reset_fields_and_determinism():
    ep = _line([0.1, 0.2], [0.5, -0.1])
    s1, o1 = env_reset(ep, EnvConfig())
    s2, o2 = env_reset(ep, EnvConfig())
    np.testing.assert_array_equal(o1, o2)
    np.testing.assert_array_equal(s1.gaze, [0.1, 0.2])
    np.testing.assert_array_equal(o1[4:6], ep.goal)
    assert s1.step == 0
    assert s1.distance_to_goal() == pytest.approx(np.hypot(0.4, 0.3))


def test_equilibrium_is_fixed_point():
    ep = _line([0.2, 0.2], [0.6, 0.2])
    state, _ = env_reset(ep, SPEC_GAINS)
    nxt, _, _ = env_step(state, np.zeros(2), SPEC_GAINS)
    np.testing.assert_array_equal(nxt.gaze, state.gaze)
    np.testing.assert_array_equal(nxt.velocity, 0.0)


def test_single_step_velocity_from_rest():
    cfg = SPEC_GAINS
    g, v = pd_update(np.zeros(2), np.zeros(2), np.array([0.3, -0.1]), cfg)
    np.testing.assert_allclose(v, cfg.kp * np.array([0.3, -0.1]) * cfg.dt)
    np.testing.assert_allclose(g, v * cfg.dt)


def _closed_form_linear_ode(err0, cfg, steps):
    # semi-implicit Euler as a 2x2 linear map on (err, vel)
    a = np.array([[1 - cfg.kp * cfg.dt ** 2, cfg.dt * (1 - cfg.kd * cfg.dt)],
                  [-cfg.kp * cfg.dt, 1 - cfg.kd * cfg.dt]])
    return np.linalg.matrix_power(a, steps) @ np.array([err0, 0.0])


@pytest.mark.parametrize("cfg", [SPEC_GAINS, EnvConfig()])
def test_constant_setpoint_converges(cfg):
    g, v = np.array([0.5, -0.4]), np.zeros(2)
    sp = np.zeros(2)
    for _ in range(100):
        g, v = pd_update(g, v, sp, cfg)
    assert np.linalg.norm(g - sp) < 1e-3
    np.testing.assert_allclose(g[0], _closed_form_linear_ode(0.5, cfg, 100)[0], atol=1e-12)


def test_default_gains_are_deadbeat():
    cfg = EnvConfig()
    g, v = pd_update(np.zeros(2), np.zeros(2), np.array([0.07, -0.02]), cfg)
    np.testing.assert_allclose(g, [0.07, -0.02], atol=1e-15)
    np.testing.assert_allclose(v, np.array([0.07, -0.02]) / cfg.dt)


def test_success_boundary():
    ep = _line([0.0, 0.0], [0.5, 0.0])
    state, _ = env_reset(ep, EnvConfig())
    at = lambda d: check_success(type(state)(**{**state.__dict__, "gaze": ep.goal + [d, 0.0]}),
                                 EnvConfig())
    assert at(0.0)
    assert at(0.02 - 1e-15)
    # distance exactly at the threshold counts as success
    s = type(state)(**{**state.__dict__, "gaze": np.array([0.0, 0.0]), "goal": np.array([0.02, 0.0])})
    assert check_success(s, EnvConfig())
    assert not at(0.03)


def test_step_clips_action():
    cfg = EnvConfig(action_limit=0.1)
    state, _ = env_reset(_line([0.0, 0.0], [1.0, 1.0]), cfg)
    nxt, _, _ = env_step(state, np.array([5.0, -5.0]), cfg)
    np.testing.assert_allclose(nxt.setpoint, [0.1, -0.1])


def test_step_contract_errors():
    cfg = EnvConfig(max_steps=1)
    state, _ = env_reset(_line([0.0, 0.0], [1.0, 0.0]), cfg)
    with pytest.raises(EnvError):
        env_step(state, np.array([np.nan, 0.0]), cfg)
    done, _, flag = env_step(state, np.zeros(2), cfg)
    assert flag
    with pytest.raises(EnvError):
        env_step(done, np.zeros(2), cfg)


def test_participants_replay_and_hold():
    parts = np.arange(3 * 2 * 2, dtype=float).reshape(3, 2, 2)
    ep = make_episode(np.array([[0, 0], [0.5, 0], [1.0, 0]]), parts)
    cfg = EnvConfig()
    state, obs = env_reset(ep, cfg)
    np.testing.assert_array_equal(obs[6:], parts[0].ravel())
    for k in range(1, 5):
        state, obs, _ = env_step(state, np.zeros(2), cfg)
        np.testing.assert_array_equal(obs[6:], parts[min(k, 2)].ravel())


def test_oracle_policy_succeeds_on_synthetic_episodes():
    s = generate_synthetic_session(SyntheticConfig(length=1500), np.random.default_rng(0))
    cfg = EnvConfig()

    def oracle(obs):
        return np.clip(obs[4:6] - obs[0:2], -cfg.action_limit, cfg.action_limit)

    trajs = [rollout(oracle, ep, cfg) for ep in extract_episodes(s)]
    assert all(t.success for t in trajs)
    for t in trajs:
        assert len(t.actions) == len(t.states) - 1 <= cfg.max_steps


def test_expert_replay_reproduces_recording():
    s = generate_synthetic_session(SyntheticConfig(length=300), np.random.default_rng(1))
    cfg = EnvConfig(success_threshold=1e-9)
    for ep in extract_episodes(s):
        acts = iter(ep.expert_actions)
        traj = rollout(lambda obs: next(acts), ep, cfg)
        m = len(traj.states)
        np.testing.assert_allclose(traj.positions, ep.facilitator[:m], atol=1e-12)


def test_goal_at_start_is_immediate_success():
    ep = make_episode(np.zeros((50, 2)))
    traj = rollout(lambda obs: np.zeros(2), ep, EnvConfig())
    assert traj.success and len(traj.actions) == 0


def test_timeout_is_failure():
    cfg = EnvConfig(max_steps=7)
    traj = rollout(lambda obs: np.zeros(2), _line([0, 0], [1, 0]), cfg)
    assert not traj.success
    assert len(traj.actions) == 7


def test_non_finite_action_aborts():
    traj = rollout(lambda obs: np.array([np.inf, 0.0]), _line([0, 0], [1, 0]), EnvConfig())
    assert traj.aborted and not traj.success
    assert "invalid action" in traj.error


def test_write_trajectory(tmp_path):
    traj = rollout(lambda obs: np.array([0.01, 0.0]), _line([0, 0], [0.05, 0]), EnvConfig())
    write_trajectory(traj, tmp_path / "t.csv")
    rows = list(csv.reader((tmp_path / "t.csv").open()))
    assert rows[0] == TRAJECTORY_COLUMNS
    assert len(rows) == len(traj.states) + 1
    assert rows[-1][5] == "" and rows[1][5] != ""


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lyapunov_non_increasing(seed):
    rng = np.random.default_rng(seed)
    for cfg in (SPEC_GAINS, EnvConfig()):
        g = rng.uniform(-np.pi / 2, np.pi / 2, 2)
        v = np.zeros(2)
        sp = rng.uniform(-0.5, 0.5, 2)
        lyap = lambda g, v: 0.5 * v @ v + 0.5 * cfg.kp * (g - sp) @ (g - sp)
        prev = lyap(g, v)
        for _ in range(100):
            g, v = pd_update(g, v, sp, cfg)
            cur = lyap(g, v)
            assert cur <= prev + 1e-6
            prev = cur
