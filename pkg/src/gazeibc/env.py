"""PD-controlled gaze environment.

A policy action is a per-frame gaze change; the environment turns it into a
setpoint ``gaze + clip(action)`` and a PD controller accelerates the
simulated gaze toward it (semi-implicit Euler).  Participant head positions
are replayed from the recorded episode.  An episode ends when the gaze is
within ``success_threshold`` of the goal or after ``max_steps`` steps.

With the default gains ``kp = 1/dt**2`` and ``kd = 1/dt`` the discrete
closed loop is deadbeat: from rest a setpoint is reached in one step and
the velocity equals ``action / dt``.  Replaying the expert actions therefore
reproduces the recorded trajectory and its velocities exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .data import ENV_ACTION_LIMIT, FPS, Episode, build_observation


class EnvError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 1.0 / FPS
    kp: float = FPS ** 2
    kd: float = FPS
    max_steps: int = 100
    success_threshold: float = 0.02
    action_limit: float = ENV_ACTION_LIMIT

    def __post_init__(self):
        if self.dt <= 0 or self.kp <= 0 or self.kd <= 0 or self.success_threshold <= 0:
            raise EnvError("dt, kp, kd and success_threshold must be positive")
        if self.max_steps < 1:
            raise EnvError("max_steps must be >= 1")


@dataclass(frozen=True)
class EnvState:
    gaze: np.ndarray
    velocity: np.ndarray
    setpoint: np.ndarray
    goal: np.ndarray
    step: int
    participants: np.ndarray = field(repr=False)   # replayed track (n, P, 2)
    prev_action: np.ndarray = field(default=None, repr=False)
    include_prev_action: bool = False
    done: bool = False

    def participants_now(self) -> np.ndarray:
        return self.participants[min(self.step, len(self.participants) - 1)]

    def distance_to_goal(self) -> float:
        return float(np.linalg.norm(self.gaze - self.goal))


def observe(state: EnvState) -> np.ndarray:
    prev = state.prev_action if state.include_prev_action else None
    return build_observation(state.gaze, state.velocity, state.goal,
                             state.participants_now(), prev)


def check_success(state: EnvState, cfg: EnvConfig) -> bool:
    return state.distance_to_goal() <= cfg.success_threshold


def env_reset(episode: Episode, cfg: EnvConfig):
    gaze = episode.facilitator[0].copy()
    vel = episode.velocity[0].copy()
    state = EnvState(gaze, vel, gaze.copy(), episode.goal.copy(), 0,
                     episode.participants, vel * cfg.dt, episode.include_prev_action)
    state = replace(state, done=check_success(state, cfg))
    return state, observe(state)


def pd_update(gaze, velocity, setpoint, cfg: EnvConfig):
    accel = cfg.kp * (setpoint - gaze) - cfg.kd * velocity
    velocity = velocity + accel * cfg.dt
    return gaze + velocity * cfg.dt, velocity


def env_step(state: EnvState, action, cfg: EnvConfig):
    if state.done or state.step >= cfg.max_steps:
        raise EnvError("env_step called on a finished episode")
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (2,) or not np.all(np.isfinite(action)):
        raise EnvError(f"invalid action {action!r}")
    applied = np.clip(action, -cfg.action_limit, cfg.action_limit)
    setpoint = state.gaze + applied
    gaze, vel = pd_update(state.gaze, state.velocity, setpoint, cfg)
    nxt = replace(state, gaze=gaze, velocity=vel, setpoint=setpoint, step=state.step + 1,
                  prev_action=applied)
    done = check_success(nxt, cfg) or nxt.step >= cfg.max_steps
    nxt = replace(nxt, done=done)
    return nxt, observe(nxt), done


@dataclass
class Trajectory:
    states: list[EnvState]
    actions: list[np.ndarray]
    success: bool
    final_distance: float
    error: str | None = None

    @property
    def positions(self) -> np.ndarray:
        return np.array([s.gaze for s in self.states])

    @property
    def velocities(self) -> np.ndarray:
        return np.array([s.velocity for s in self.states])

    @property
    def aborted(self) -> bool:
        return self.error is not None


def rollout(policy_fn: Callable[[np.ndarray], np.ndarray], episode: Episode,
            cfg: EnvConfig) -> Trajectory:
    """Run one goal-reaching episode.

    ``policy_fn(obs)`` must return a 2-vector; stochastic policies carry their
    own generator (see ``Policy.as_fn``).  A non-finite action aborts the
    trajectory, which is then marked failed with ``error`` set.
    """
    state, obs = env_reset(episode, cfg)
    states, actions = [state], []
    while not state.done:
        action = np.asarray(policy_fn(obs), dtype=np.float64)
        if action.shape != (2,) or not np.all(np.isfinite(action)):
            return Trajectory(states, actions, False, state.distance_to_goal(),
                              error=f"policy returned invalid action {action!r} at step {state.step}")
        state, obs, _ = env_step(state, action, cfg)
        states.append(state)
        actions.append(action)
    return Trajectory(states, actions, check_success(state, cfg), state.distance_to_goal())


TRAJECTORY_COLUMNS = ["step", "gaze_yaw", "gaze_pitch", "vel_yaw", "vel_pitch",
                      "action_yaw", "action_pitch", "dist_to_goal"]


def write_trajectory(traj: Trajectory, path) -> None:
    """One row per visited state; the action columns hold the action taken
    from that state and are empty on the final row."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for i, s in enumerate(traj.states):
            act = traj.actions[i] if i < len(traj.actions) else (math.nan, math.nan)
            act_txt = ["" if math.isnan(a) else f"{a:.10g}" for a in act]
            w.writerow([s.step, f"{s.gaze[0]:.10g}", f"{s.gaze[1]:.10g}",
                        f"{s.velocity[0]:.10g}", f"{s.velocity[1]:.10g}", *act_txt,
                        f"{s.distance_to_goal():.10g}"])
