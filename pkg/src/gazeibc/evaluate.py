"""Policy evaluation by closed-loop rollout, aggregation and report output.

Aggregation mirrors a per-facilitator results table: episode metrics are
averaged within each session, session means are averaged within each
facilitator type, and the ``Average`` row is the mean of the type rows.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import FACILITATOR_TYPES
from .env import EnvConfig, Trajectory, rollout, write_trajectory
from .metrics import SPARC_MIN_SAMPLES, MetricError, SparcConfig, average_success, r_squared, sparc

METRICS = ("asm", "r2", "sparc")
AXES = ("yaw", "pitch")
POLICY_LABELS = {"ibc": "Implicit BC", "mse": "Explicit BC", "reported": "Reported"}
TYPE_LABELS = {"teacher": "Teacher", "musician": "Musician", "music_teacher": "M. Teacher",
               "synthetic": "Synthetic", "average": "Average"}
SHORT_EPISODE = 10


class ReportError(ValueError):
    pass


@dataclass
class EpisodeResult:
    policy: str
    session_id: str
    facilitator_type: str
    start: int
    success: bool
    steps: int
    final_distance: float
    r2: tuple[float, float] | None = None
    sparc: tuple[float, float] | None = None
    no_motion: bool = False
    short: bool = False
    error: str | None = None
    trajectory: Trajectory | None = None

    @property
    def aborted(self) -> bool:
        return self.error is not None


@dataclass
class ReportRow:
    facilitator_type: str
    policy: str
    asm: float = math.nan
    r2_yaw: float = math.nan
    r2_pitch: float = math.nan
    sparc_yaw: float = math.nan
    sparc_pitch: float = math.nan
    episodes: int = 0
    aborted: int = 0
    r2_excluded: int = 0
    sparc_excluded: int = 0


@dataclass
class MetricsReport:
    rows: list[ReportRow]
    metrics: tuple[str, ...] = METRICS
    episodes: list[EpisodeResult] = field(default_factory=list)

    def row(self, facilitator_type: str, policy: str) -> ReportRow:
        for r in self.rows:
            if r.facilitator_type == facilitator_type and r.policy == policy:
                return r
        raise KeyError((facilitator_type, policy))

    @property
    def policies(self) -> list[str]:
        return list(dict.fromkeys(r.policy for r in self.rows))

    @property
    def types(self) -> list[str]:
        return list(dict.fromkeys(r.facilitator_type for r in self.rows))

    @property
    def aborted(self) -> int:
        return sum(r.aborted for r in self.rows if r.facilitator_type != "average")


def _episode_metrics(res: EpisodeResult, traj: Trajectory, episode, metrics, sparc_cfg):
    pos = traj.positions
    if "r2" in metrics:
        m = min(len(pos), episode.n)
        res.short = m < SHORT_EPISODE
        try:
            res.r2 = tuple(r_squared(pos[:m, k], episode.facilitator[:m, k]) for k in range(2))
        except MetricError:
            res.r2 = None
    if "sparc" in metrics and len(pos) >= SPARC_MIN_SAMPLES:
        vals = [sparc(pos[:, k], sparc_cfg) for k in range(2)]
        res.sparc = tuple(v.value for v in vals)
        res.no_motion = any(v.no_motion for v in vals)


def evaluate_episode(name: str, policy, episode, index: int, env_cfg: EnvConfig,
                     sparc_cfg: SparcConfig, metrics=METRICS, seed: int = 0,
                     keep_trajectory: bool = False) -> EpisodeResult:
    rng = np.random.default_rng([int(seed), int(index)])
    traj = rollout(policy.as_fn(rng), episode, env_cfg)
    res = EpisodeResult(name, episode.session_id, episode.facilitator_type, episode.start,
                        traj.success, len(traj.actions), traj.final_distance, error=traj.error)
    if not traj.aborted:
        _episode_metrics(res, traj, episode, metrics, sparc_cfg)
    if keep_trajectory:
        res.trajectory = traj
    return res


def _run_chunk(args):
    name, policy, items, env_cfg, sparc_cfg, metrics, seed, keep = args
    return [(i, evaluate_episode(name, policy, ep, i, env_cfg, sparc_cfg, metrics, seed, keep))
            for i, ep in items]


def _mean(values):
    vals = [v for v in values if v is not None and not math.isnan(v)]
    return sum(vals) / len(vals) if vals else math.nan


def _type_order(types):
    known = [t for t in FACILITATOR_TYPES if t in types]
    return known + sorted(t for t in types if t not in FACILITATOR_TYPES)


def aggregate(results: list[EpisodeResult], policies, metrics=METRICS) -> list[ReportRow]:
    rows = []
    types = _type_order({r.facilitator_type for r in results})
    for name in policies:
        mine = [r for r in results if r.policy == name]
        type_rows = []
        for ftype in types:
            eps = [r for r in mine if r.facilitator_type == ftype]
            sessions = sorted({r.session_id for r in eps})
            per_session = {s: [r for r in eps if r.session_id == s] for s in sessions}
            row = ReportRow(ftype, name, episodes=len(eps), aborted=sum(r.aborted for r in eps))
            if "asm" in metrics:
                row.asm = _mean([average_success(v) for v in per_session.values()])
            if "r2" in metrics:
                row.r2_excluded = sum(r.r2 is None for r in eps)
                for k, ax in enumerate(AXES):
                    setattr(row, f"r2_{ax}", _mean(
                        [_mean([r.r2[k] for r in v if r.r2 is not None]) for v in per_session.values()]))
            if "sparc" in metrics:
                row.sparc_excluded = sum(r.sparc is None for r in eps)
                for k, ax in enumerate(AXES):
                    setattr(row, f"sparc_{ax}", _mean(
                        [_mean([r.sparc[k] for r in v if r.sparc is not None])
                         for v in per_session.values()]))
            type_rows.append(row)
        avg = ReportRow("average", name, episodes=sum(r.episodes for r in type_rows),
                        aborted=sum(r.aborted for r in type_rows),
                        r2_excluded=sum(r.r2_excluded for r in type_rows),
                        sparc_excluded=sum(r.sparc_excluded for r in type_rows))
        for col in ("asm", "r2_yaw", "r2_pitch", "sparc_yaw", "sparc_pitch"):
            setattr(avg, col, _mean([getattr(r, col) for r in type_rows]))
        rows.extend(type_rows)
        rows.append(avg)
    return rows


def evaluate(policies: dict, episodes, env_cfg: EnvConfig | None = None,
             sparc_cfg: SparcConfig | None = None, metrics=METRICS, seed: int = 0,
             jobs: int = 1, keep_trajectories: bool = False) -> MetricsReport:
    """Roll out every policy on every episode and aggregate the metrics.

    ``policies`` maps a short name (``"ibc"``, ``"mse"``) to a policy object
    with ``as_fn(rng)``.  Episode ``i`` always uses the generator seeded with
    ``(seed, i)``, so results do not depend on ``jobs``.
    """
    episodes = list(episodes)
    if not episodes:
        raise ReportError("evaluate needs at least one test episode")
    metrics = tuple(m for m in METRICS if m in metrics)
    if not metrics:
        raise ReportError("no metrics selected")
    env_cfg = env_cfg or EnvConfig()
    sparc_cfg = sparc_cfg or SparcConfig()
    items = list(enumerate(episodes))
    jobs = max(int(jobs), 1)
    results = []
    for name, policy in policies.items():
        tasks = [(name, policy, items[i::jobs], env_cfg, sparc_cfg, metrics, seed,
                  keep_trajectories) for i in range(jobs) if items[i::jobs]]
        if len(tasks) <= 1:
            done = [pair for t in tasks for pair in _run_chunk(t)]
        else:
            with ProcessPoolExecutor(max_workers=len(tasks)) as pool:
                done = [pair for part in pool.map(_run_chunk, tasks) for pair in part]
        results.extend(r for _, r in sorted(done, key=lambda pair: pair[0]))
    return MetricsReport(aggregate(results, list(policies), metrics), metrics, results)


def heldout_asm(policy, episodes, env_cfg: EnvConfig | None = None, seed: int = 0) -> float:
    return evaluate({"policy": policy}, episodes, env_cfg, metrics=("asm",), seed=seed).rows[-1].asm


# --- report output -------------------------------------------------------

def _csv_columns(metrics) -> list[str]:
    cols = ["facilitator_type", "policy"]
    if "asm" in metrics:
        cols.append("asm")
    if "r2" in metrics:
        cols += ["r2_yaw", "r2_pitch"]
    if "sparc" in metrics:
        cols += ["sparc_yaw", "sparc_pitch"]
    cols.append("episodes")
    cols.append("aborted")
    if "r2" in metrics:
        cols.append("r2_excluded")
    if "sparc" in metrics:
        cols.append("sparc_excluded")
    return cols


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_report_csv(report: MetricsReport, path) -> Path:
    path = Path(path)
    cols = _csv_columns(report.metrics)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in report.rows:
            w.writerow([_fmt(getattr(row, c)) for c in cols])
    return path


def read_report_csv(path) -> MetricsReport:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"facilitator_type", "policy"} <= set(reader.fieldnames):
            raise ReportError(f"{path}: missing facilitator_type/policy columns")
        fields = set(reader.fieldnames)
        metrics = tuple(m for m, c in (("asm", "asm"), ("r2", "r2_yaw"), ("sparc", "sparc_yaw"))
                        if c in fields)
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            row = ReportRow(rec["facilitator_type"], rec["policy"])
            for key, val in rec.items():
                if key in ("facilitator_type", "policy") or key is None:
                    continue
                if not hasattr(row, key):
                    raise ReportError(f"{path}:{lineno}: unknown column {key!r}")
                try:
                    if isinstance(getattr(row, key), int):
                        setattr(row, key, int(val) if val else 0)
                    else:
                        setattr(row, key, float(val) if val else math.nan)
                except ValueError as exc:
                    raise ReportError(f"{path}:{lineno}: bad value {val!r} for {key}") from exc
            rows.append(row)
    return MetricsReport(rows, metrics)


def _label(mapping, key):
    return mapping.get(key, key)


def render_text_table(report: MetricsReport, digits: int = 2) -> str:
    """Plain-text tables, one per metric: facilitator types as rows, policies
    as columns (yaw/pitch sub-columns for R^2 and SPARC)."""
    policies = report.policies
    types = report.types
    blocks = []

    def cell(v):
        return "-" if math.isnan(v) else f"{v:.{digits}f}"

    specs = []
    if "asm" in report.metrics:
        specs.append(("Average success metric (ASM)", [("", "asm")]))
    if "r2" in report.metrics:
        specs.append(("R^2", [("yaw", "r2_yaw"), ("pitch", "r2_pitch")]))
    if "sparc" in report.metrics:
        specs.append(("SPARC", [("yaw", "sparc_yaw"), ("pitch", "sparc_pitch")]))
    for title, cols in specs:
        header = ["Facilitator"]
        for p in policies:
            for sub, _ in cols:
                header.append(f"{_label(POLICY_LABELS, p)} {sub}".strip())
        body = []
        for t in types:
            line = [_label(TYPE_LABELS, t)]
            for p in policies:
                try:
                    row = report.row(t, p)
                except KeyError:
                    line += ["-"] * len(cols)
                    continue
                line += [cell(getattr(row, attr)) for _, attr in cols]
            body.append(line)
        widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
        fmt = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w)
                                  for i, (c, w) in enumerate(zip(r, widths)))
        rule = "-" * len(fmt(header))
        blocks.append("\n".join([title, rule, fmt(header), rule, *map(fmt, body), rule]))
    return "\n\n".join(blocks) + "\n"


def write_plot_data(report: MetricsReport, directory) -> list[Path]:
    """Per-episode trajectory CSVs plus an ``index.csv`` listing them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    index_rows = []
    for res in report.episodes:
        if res.trajectory is None:
            continue
        name = f"{res.policy}_{res.session_id}_{res.start:06d}.csv"
        write_trajectory(res.trajectory, directory / name)
        written.append(directory / name)
        index_rows.append([name, res.policy, res.session_id, res.facilitator_type, res.start,
                           int(res.success), res.steps])
    with (directory / "index.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "policy", "session_id", "facilitator_type", "start", "success", "steps"])
        w.writerows(index_rows)
    return written


def emit_report(report: MetricsReport, fmt: str, path) -> Path:
    """Write ``report`` as ``text_table``, ``csv`` or ``plot_data`` (a directory)."""
    path = Path(path)
    try:
        if fmt == "text_table":
            path.write_text(render_text_table(report), encoding="utf-8")
        elif fmt == "csv":
            write_report_csv(report, path)
        elif fmt == "plot_data":
            write_plot_data(report, path)
        else:
            raise ReportError(f"unknown report format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path
