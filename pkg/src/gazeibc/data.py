"""Gaze session recordings, episode extraction, action bounds and fold splits.

A gaze is a ``(yaw, pitch)`` pair in radians.  Sessions are stored as arrays:
``facilitator`` (T, 2), ``participants`` (T, P, 2) and ``velocity`` (T, 2).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

FPS = 30.0
EPISODE_LEN = 50
ENV_ACTION_LIMIT = math.pi / 2
FACILITATOR_TYPES = ("teacher", "musician", "music_teacher", "synthetic")


class DataError(ValueError):
    pass


class SessionParseError(DataError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


def canonicalize(gaze: np.ndarray) -> np.ndarray:
    """Map angles to yaw in [-pi, pi), pitch in [-pi/2, pi/2] (same direction)."""
    g = np.array(gaze, dtype=np.float64, copy=True)
    yaw = g[..., 0]
    raw_pitch = g[..., 1]
    # values already in range pass through untouched (no rounding from the modulo)
    pitch = np.where(np.abs(raw_pitch) <= np.pi, raw_pitch,
                     (raw_pitch + np.pi) % (2 * np.pi) - np.pi)
    over = pitch > np.pi / 2
    under = pitch < -np.pi / 2
    pitch = np.where(over, np.pi - pitch, np.where(under, -np.pi - pitch, pitch))
    yaw = np.where(over | under, yaw + np.pi, yaw)
    g[..., 0] = np.where((yaw >= -np.pi) & (yaw < np.pi), yaw, (yaw + np.pi) % (2 * np.pi) - np.pi)
    g[..., 1] = pitch
    return g


@dataclass
class Session:
    facilitator: np.ndarray
    participants: np.ndarray
    fps: float = FPS
    facilitator_type: str = "synthetic"
    session_id: str = ""
    velocity: np.ndarray | None = None
    decision_frames: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        if self.fps <= 0:
            raise DataError(f"fps must be positive, got {self.fps}")
        if self.facilitator_type not in FACILITATOR_TYPES:
            raise DataError(f"unknown facilitator type {self.facilitator_type!r}")
        if self.participants.ndim != 3 or self.participants.shape[0] != len(self.facilitator):
            raise DataError("participants must have shape (frames, P, 2)")

    def __len__(self):
        return len(self.facilitator)

    @property
    def n_participants(self) -> int:
        return self.participants.shape[1]


def session_header(n_participants: int) -> list[str]:
    cols = ["frame", "fac_yaw", "fac_pitch"]
    for i in range(1, n_participants + 1):
        cols += [f"p{i}_yaw", f"p{i}_pitch"]
    return cols


def load_session(path, expected_p: int, facilitator_type: str = "synthetic",
                 fps: float = FPS, session_id: str | None = None) -> Session:
    """Parse a session CSV (``frame,fac_yaw,fac_pitch,p1_yaw,p1_pitch,...``)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SessionParseError(path, 1, "empty file") from None
        n_cols = len(header)
        if n_cols < 3 or (n_cols - 3) % 2:
            raise SessionParseError(path, 1, f"bad header with {n_cols} columns")
        file_p = (n_cols - 3) // 2
        if file_p != expected_p:
            raise DataError(f"{path}: file has {file_p} participants, expected {expected_p}")
        if header != session_header(file_p):
            raise SessionParseError(path, 1, f"unexpected header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_cols:
                raise SessionParseError(path, lineno, f"expected {n_cols} columns, got {len(row)}")
            try:
                frame = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise SessionParseError(path, lineno, str(exc)) from None
            if not all(math.isfinite(v) for v in vals):
                raise SessionParseError(path, lineno, "non-finite value")
            if frame != len(rows):
                raise SessionParseError(path, lineno, f"frame index {frame}, expected {len(rows)}")
            rows.append(vals)
    if not rows:
        raise SessionParseError(path, 2, "no frames")
    arr = np.asarray(rows, dtype=np.float64)
    fac = canonicalize(arr[:, 0:2])
    parts = canonicalize(arr[:, 2:].reshape(len(arr), file_p, 2))
    return Session(fac, parts, fps=fps, facilitator_type=facilitator_type,
                   session_id=session_id if session_id is not None else path.stem)


def write_session(session: Session, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(session_header(session.n_participants))
        for t in range(len(session)):
            vals = [*session.facilitator[t], *session.participants[t].ravel()]
            w.writerow([t, *(repr(float(v)) for v in vals)])


def compute_velocities(session: Session) -> Session:
    """Facilitator gaze velocity in rad/s; the first frame is zero."""
    vel = np.zeros_like(session.facilitator)
    vel[1:] = np.diff(session.facilitator, axis=0) * session.fps
    return Session(session.facilitator, session.participants, session.fps,
                   session.facilitator_type, session.session_id, vel, session.decision_frames)


def build_observation(gaze, velocity, goal, participants, prev_action=None) -> np.ndarray:
    """Flatten to ``[gaze, velocity, goal, p1, ..., pP(, prev_action)]``.

    Leading batch axes are preserved.
    """
    gaze = np.asarray(gaze, dtype=np.float64)
    parts = np.asarray(participants, dtype=np.float64)
    lead = gaze.shape[:-1]
    pieces = [gaze, np.broadcast_to(velocity, lead + (2,)), np.broadcast_to(goal, lead + (2,)),
              parts.reshape(lead + (-1,))]
    if prev_action is not None:
        pieces.append(np.broadcast_to(prev_action, lead + (2,)))
    return np.concatenate(pieces, axis=-1)


def observation_dim(n_participants: int, include_prev_action: bool = False) -> int:
    return 6 + 2 * n_participants + (2 if include_prev_action else 0)


@dataclass
class Episode:
    facilitator: np.ndarray    # (n, 2) expert gaze
    velocity: np.ndarray       # (n, 2)
    participants: np.ndarray   # (n, P, 2)
    goal: np.ndarray           # (2,)
    facilitator_type: str = "synthetic"
    session_id: str = ""
    start: int = 0
    include_prev_action: bool = False
    fps: float = FPS

    @property
    def n(self) -> int:
        return len(self.facilitator)

    @property
    def expert_actions(self) -> np.ndarray:
        return np.diff(self.facilitator, axis=0)

    @property
    def observations(self) -> np.ndarray:
        prev = self.velocity / self.fps if self.include_prev_action else None
        return build_observation(self.facilitator, self.velocity, self.goal,
                                 self.participants, prev)

    @property
    def obs_dim(self) -> int:
        return observation_dim(self.participants.shape[1], self.include_prev_action)


def extract_episodes(session: Session, n: int = EPISODE_LEN, stride: int | None = None,
                     include_prev_action: bool = False) -> list[Episode]:
    """Cut fixed-length windows; the goal is the facilitator gaze at the last frame."""
    stride = n if stride is None else stride
    if stride < 1 or n < 2:
        raise DataError("need n >= 2 and stride >= 1")
    if session.velocity is None:
        session = compute_velocities(session)
    total = len(session)
    if total < n:
        log.warning("session %s has %d frames, shorter than episode length %d",
                    session.session_id, total, n)
        return []
    episodes = []
    for start in range(0, total - n + 1, stride):
        sl = slice(start, start + n)
        fac = session.facilitator[sl]
        episodes.append(Episode(fac.copy(), session.velocity[sl].copy(),
                                session.participants[sl].copy(), fac[-1].copy(),
                                session.facilitator_type, session.session_id, start,
                                include_prev_action, session.fps))
    return episodes


@dataclass(frozen=True)
class ActionBounds:
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.asarray(self.low, dtype=np.float64)
        high = np.asarray(self.high, dtype=np.float64)
        if low.shape != (2,) or high.shape != (2,) or np.any(low > high):
            raise DataError(f"invalid action bounds {low} .. {high}")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    def clip(self, actions):
        return np.clip(actions, self.low, self.high)

    @property
    def mid(self):
        return 0.5 * (self.low + self.high)

    @property
    def half(self):
        return 0.5 * (self.high - self.low)


def action_bounds(episodes) -> ActionBounds:
    """Per-axis min/max of expert actions, intersected with the env range."""
    acts = [ep.expert_actions for ep in episodes]
    acts = [a for a in acts if len(a)]
    if not acts:
        raise DataError("no expert actions to derive bounds from")
    allacts = np.concatenate(acts)
    lo = np.clip(allacts.min(axis=0), -ENV_ACTION_LIMIT, ENV_ACTION_LIMIT)
    hi = np.clip(allacts.max(axis=0), -ENV_ACTION_LIMIT, ENV_ACTION_LIMIT)
    return ActionBounds(lo, hi)


def transitions(episodes) -> tuple[np.ndarray, np.ndarray]:
    """Stack ``(observation, expert action)`` pairs from every episode."""
    obs = [ep.observations[:-1] for ep in episodes]
    acts = [ep.expert_actions for ep in episodes]
    return np.concatenate(obs), np.concatenate(acts)


# -- folds -----------------------------------------------------------------

@dataclass
class FoldSpec:
    """``folds[k] = (train_ids, test_ids)``."""

    folds: dict[int, tuple[list[str], list[str]]]

    def validate(self, session_ids) -> None:
        ids = set(session_ids)
        for k, (train, test) in self.folds.items():
            overlap = set(train) & set(test)
            if overlap:
                raise DataError(f"fold {k}: sessions in both train and test: {sorted(overlap)}")
            covered = set(train) | set(test)
            if covered != ids:
                missing = sorted(ids - covered)
                extra = sorted(covered - ids)
                raise DataError(f"fold {k}: missing {missing}, unknown {extra}")
            if len(train) != len(set(train)) or len(test) != len(set(test)):
                raise DataError(f"fold {k}: duplicate session ids")

    def write(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fold", "role", "session_id"])
            for k in sorted(self.folds):
                train, test = self.folds[k]
                for sid in train:
                    w.writerow([k, "train", sid])
                for sid in test:
                    w.writerow([k, "test", sid])

    @classmethod
    def read(cls, path) -> FoldSpec:
        folds: dict[int, tuple[list[str], list[str]]] = {}
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            for lineno, row in enumerate(reader, start=1):
                if not row or row[0].startswith("#"):
                    continue
                if lineno == 1 and row[0] == "fold":
                    continue
                if len(row) != 3 or row[1] not in ("train", "test"):
                    raise DataError(f"{path}:{lineno}: expected fold,role,session_id")
                try:
                    k = int(row[0])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad fold number {row[0]!r}") from None
                train, test = folds.setdefault(k, ([], []))
                (train if row[1] == "train" else test).append(row[2])
        if not folds:
            raise DataError(f"{path}: no folds")
        return cls(folds)


def default_fold_spec(session_ids, ratios=((4, 3), (5, 2))) -> FoldSpec:
    """Two folds with the given train:test ratios.

    Fold 1 tests on the last sessions, fold 2 on the first ones, so the two
    test sets differ.
    """
    ids = list(session_ids)
    n = len(ids)
    folds = {}
    for k, (a, b) in enumerate(ratios, start=1):
        n_train = int(round(n * a / (a + b)))
        n_train = min(max(n_train, 1), n - 1) if n > 1 else n
        if k % 2:
            folds[k] = (ids[:n_train], ids[n_train:])
        else:
            folds[k] = (ids[n - n_train:], ids[:n - n_train])
    return FoldSpec(folds)


def split_folds(sessions, fold_spec: FoldSpec) -> dict[int, tuple[list, list]]:
    """Resolve a fold spec into per-fold ``(train, test)`` session lists."""
    by_id = {s.session_id: s for s in sessions}
    if len(by_id) != len(sessions):
        raise DataError("duplicate session ids")
    fold_spec.validate(by_id)
    return {k: ([by_id[i] for i in train], [by_id[i] for i in test])
            for k, (train, test) in fold_spec.folds.items()}
