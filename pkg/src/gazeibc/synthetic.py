"""Scripted facilitator sessions used in place of recorded multiparty data.

Scenarios
---------
attend_speaker
    A randomly scheduled participant speaks; the facilitator turns toward the
    speaker's seat along a minimum-jerk path and holds.  The speaking
    participant raises their head by ``speaker_cue`` rad in pitch, which makes
    the start of each turn visible in the observations.
scan_sweep
    The facilitator sweeps back and forth across all seats, pausing briefly
    at each one.
bimodal_choice
    Every ``2 * EPISODE_LEN`` frames the facilitator, resting at a home
    direction, glances at one of two mirror-image targets (coin flip) with a
    fast saccade-like turn, then looks at a central focus point and finally
    returns home.  Both choices reach the same focus point, so the episode
    goal does not reveal the side taken.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import EPISODE_LEN, FPS, Session

SCENARIOS = ("attend_speaker", "scan_sweep", "bimodal_choice")


@dataclass(frozen=True)
class SyntheticConfig:
    n_participants: int = 5
    length: int = 3000
    fps: float = FPS
    scenario: str = "attend_speaker"
    noise_std: float = 0.01
    seat_yaw: tuple[float, float] = (-1.0, 1.0)
    seat_pitch: tuple[float, float] = (-0.3, 0.3)
    max_step: float = 0.04          # peak facilitator change per frame on smooth turns
    min_turn_frames: int = 10
    hold_frames: tuple[int, int] = (40, 120)
    speaker_cue: float = 0.1
    sweep_hold: int = 10
    choice_yaw: float = 0.6
    home_pitch: float = -0.2
    focus_pitch: float = 0.2
    saccade_frames: int = 10
    saccade_ratio: float = 0.7
    facilitator_type: str = "synthetic"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.length < EPISODE_LEN:
            raise ValueError(f"length must be >= {EPISODE_LEN}")
        if self.n_participants < 1:
            raise ValueError("need at least one participant")


def seat_directions(cfg: SyntheticConfig) -> np.ndarray:
    p = cfg.n_participants
    return np.stack([np.linspace(*cfg.seat_yaw, p), np.linspace(*cfg.seat_pitch, p)], axis=1)


def minimum_jerk(start, end, frames: int) -> np.ndarray:
    """``frames + 1`` samples of the minimum-jerk path from start to end."""
    tau = np.linspace(0.0, 1.0, frames + 1)[:, None]
    s = 10 * tau**3 - 15 * tau**4 + 6 * tau**5
    return np.asarray(start) + (np.asarray(end) - np.asarray(start)) * s


def _turn_frames(cfg: SyntheticConfig, start, end) -> int:
    dist = float(np.linalg.norm(np.asarray(end) - np.asarray(start)))
    # peak velocity of a minimum-jerk profile is 1.875 * dist / duration
    return max(cfg.min_turn_frames, math.ceil(1.875 * dist / cfg.max_step))


def _attend_speaker(cfg, seats, rng):
    T = cfg.length
    fac = np.zeros((T, 2))
    speaker = np.zeros(T, dtype=np.int64)
    pos = np.zeros(2)
    t = 0
    current = int(rng.integers(cfg.n_participants))
    while t < T:
        target = seats[current]
        path = minimum_jerk(pos, target, _turn_frames(cfg, pos, target))
        hold = int(rng.integers(cfg.hold_frames[0], cfg.hold_frames[1] + 1))
        seg = np.concatenate([path[:-1], np.repeat(target[None], hold + 1, axis=0)])
        n = min(len(seg), T - t)
        fac[t:t + n] = seg[:n]
        speaker[t:t + n] = current
        t += n
        pos = target
        if cfg.n_participants > 1:
            others = [i for i in range(cfg.n_participants) if i != current]
            current = int(others[rng.integers(len(others))])
    return fac, speaker, np.zeros(0, dtype=np.int64)


def _scan_sweep(cfg, seats, rng):
    T = cfg.length
    order = seats[np.argsort(seats[:, 0])]
    if len(order) > 1:
        cycle = np.concatenate([order, order[-2:0:-1]])
    else:
        cycle = order
    fac = np.zeros((T, 2))
    pos = cycle[0]
    t = 0
    k = 1
    while t < T:
        target = cycle[k % len(cycle)]
        path = minimum_jerk(pos, target, _turn_frames(cfg, pos, target))
        seg = np.concatenate([path[:-1], np.repeat(target[None], cfg.sweep_hold, axis=0)])
        n = min(len(seg), T - t)
        fac[t:t + n] = seg[:n]
        t += n
        pos = target
        k += 1
    return fac, np.full(T, -1), np.zeros(0, dtype=np.int64)


def _saccade(start, end, frames: int, ratio: float) -> np.ndarray:
    """Decelerating turn: per-frame steps shrink geometrically by ``ratio``."""
    steps = ratio ** np.arange(frames)
    frac = np.concatenate([[0.0], np.cumsum(steps) / steps.sum()])[:, None]
    return np.asarray(start) + (np.asarray(end) - np.asarray(start)) * frac


def _bimodal_choice(cfg, seats, rng):
    T = cfg.length
    n = EPISODE_LEN
    period = 2 * n
    home = np.array([0.0, cfg.home_pitch])
    focus = np.array([0.0, cfg.focus_pitch])
    fac = np.zeros((T, 2))
    decisions = []
    for t0 in range(0, T, period):
        side = 1.0 if rng.random() < 0.5 else -1.0
        target = np.array([side * cfg.choice_yaw, cfg.home_pitch])
        glance = _saccade(home, target, cfg.saccade_frames, cfg.saccade_ratio)
        to_focus = minimum_jerk(target, focus, 30)
        back = minimum_jerk(focus, home, 30)
        first = np.concatenate([glance[:-1], np.repeat(target[None], 5, axis=0), to_focus])
        first = np.concatenate([first, np.repeat(focus[None], n - len(first), axis=0)])
        second = np.concatenate([back, np.repeat(home[None], n - len(back), axis=0)])
        seg = np.concatenate([first, second])
        m = min(period, T - t0)
        fac[t0:t0 + m] = seg[:m]
        decisions.append(t0)
    return fac, np.full(T, -1), np.asarray(decisions, dtype=np.int64)


def generate_synthetic_session(cfg: SyntheticConfig, rng: np.random.Generator,
                               session_id: str = "") -> Session:
    """Generate one scripted session; identical rng state gives identical output."""
    seats = seat_directions(cfg)
    script = {"attend_speaker": _attend_speaker, "scan_sweep": _scan_sweep,
              "bimodal_choice": _bimodal_choice}[cfg.scenario]
    fac, speaker, decisions = script(cfg, seats, rng)
    parts = np.repeat(seats[None], cfg.length, axis=0)
    if cfg.scenario == "attend_speaker":
        parts[np.arange(cfg.length), speaker, 1] += cfg.speaker_cue
    if cfg.noise_std > 0:
        parts = parts + rng.normal(0.0, cfg.noise_std, size=parts.shape)
    return Session(fac, parts, fps=cfg.fps, facilitator_type=cfg.facilitator_type,
                   session_id=session_id, decision_frames=decisions)
