import csv
import math

import numpy as np
import pytest

from gazeibc.data import action_bounds, extract_episodes
from gazeibc.env import EnvConfig
from gazeibc.evaluate import (EpisodeResult, MetricsReport, ReportError, ReportRow, aggregate,
                              emit_report, evaluate, read_report_csv, render_text_table,
                              write_report_csv)
from gazeibc.policy import LangevinConfig
from gazeibc.synthetic import SyntheticConfig, generate_synthetic_session
from gazeibc.train import TrainConfig, train


def _res(policy, ftype, sid, success, r2=(0.5, 0.5), sp=(-1.0, -1.0)):
    return EpisodeResult(policy, sid, ftype, 0, success, 10, 0.0, r2, sp)


def test_average_row_is_mean_of_types():
    results = ([_res("ibc", "teacher", "a", s) for s in [True] * 9 + [False]]
               + [_res("ibc", "musician", "b", True) for _ in range(4)])
    rows = aggregate(results, ["ibc"])
    assert [r.facilitator_type for r in rows] == ["teacher", "musician", "average"]
    assert rows[0].asm == pytest.approx(0.9)
    assert rows[1].asm == 1.0
    assert rows[2].asm == pytest.approx(0.95)
    assert rows[2].episodes == 14


def test_session_means_before_type_means():
    results = ([_res("mse", "teacher", "a", True)]
               + [_res("mse", "teacher", "b", False) for _ in range(3)])
    (row, _) = aggregate(results, ["mse"])
    # session a -> 1.0, session b -> 0.0, type mean 0.5 (not 1/4)
    assert row.asm == 0.5


def test_excluded_counts():
    results = [_res("ibc", "synthetic", "a", True), _res("ibc", "synthetic", "a", True, r2=None, sp=None)]
    row = aggregate(results, ["ibc"])[0]
    assert row.r2_excluded == 1 and row.sparc_excluded == 1
    assert row.r2_yaw == 0.5


def _report():
    rows = aggregate([_res(p, t, t[:2], s) for p in ("ibc", "mse")
                      for t in ("teacher", "musician", "music_teacher") for s in (True, False, True)],
                     ["ibc", "mse"])
    return MetricsReport(rows)


def test_csv_row_count_and_round_trip(tmp_path):
    rep = _report()
    path = write_report_csv(rep, tmp_path / "r.csv")
    with path.open() as fh:
        assert sum(1 for _ in fh) - 1 == 3 * 2 + 2
    back = read_report_csv(path)
    assert back.metrics == rep.metrics
    for a, b in zip(rep.rows, back.rows):
        for k, v in a.__dict__.items():
            w = getattr(b, k)
            assert (math.isnan(v) and math.isnan(w)) if isinstance(v, float) and math.isnan(v) else v == w


def test_read_report_rejects_unknown_column(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("facilitator_type,policy,bogus\nteacher,ibc,1\n")
    with pytest.raises(ReportError):
        read_report_csv(p)


def test_text_table_layout():
    text = render_text_table(_report())
    for label in ("Teacher", "Musician", "M. Teacher", "Average", "Implicit BC", "Explicit BC",
                  "Average success metric", "R^2", "SPARC"):
        assert label in text


def test_emit_report_formats(tmp_path):
    rep = _report()
    emit_report(rep, "text_table", tmp_path / "t.txt")
    emit_report(rep, "csv", tmp_path / "t.csv")
    assert (tmp_path / "t.txt").read_text().startswith("Average success metric")
    with pytest.raises(ReportError):
        emit_report(rep, "xml", tmp_path / "t.xml")
    with pytest.raises(OSError):
        emit_report(rep, "csv", tmp_path / "missing" / "dir" / "t.csv")


@pytest.fixture(scope="module")
def trained():
    s = [generate_synthetic_session(SyntheticConfig(length=600), np.random.default_rng([5, i]), f"s{i}")
         for i in range(2)]
    eps = [e for x in s for e in extract_episodes(x)]
    cfg = TrainConfig(steps=40, batch_size=32, hidden_dims=(16,), dropout_rate=0.0,
                      langevin=LangevinConfig(n_mcmc=5, n_samples=8),
                      infer_langevin=LangevinConfig(n_mcmc=10, n_samples=8))
    return {k: train(k, eps, cfg).policy for k in ("ibc", "mse")}, eps[:6]


def test_evaluate_deterministic_and_jobs_independent(trained):
    policies, eps = trained
    a = evaluate(policies, eps, seed=3)
    b = evaluate(policies, eps, seed=3)
    c = evaluate(policies, eps, seed=3, jobs=2)
    assert a.rows == b.rows == c.rows
    assert len(a.rows) == 2 * 2
    assert all(0 <= r.asm <= 1 for r in a.rows)
    assert all(r.sparc_yaw <= 0 for r in a.rows if not math.isnan(r.sparc_yaw))


def test_evaluate_metric_filter_and_plot_data(trained, tmp_path):
    policies, eps = trained
    rep = evaluate({"mse": policies["mse"]}, eps, metrics=("asm",), keep_trajectories=True)
    assert rep.metrics == ("asm",)
    assert all(math.isnan(r.r2_yaw) for r in rep.rows)
    emit_report(rep, "plot_data", tmp_path / "plots")
    index = list(csv.DictReader((tmp_path / "plots" / "index.csv").open()))
    assert len(index) == len(eps)
    assert all((tmp_path / "plots" / row["file"]).is_file() for row in index)
    write_report_csv(rep, tmp_path / "asm.csv")
    header = (tmp_path / "asm.csv").read_text().splitlines()[0]
    assert "r2_yaw" not in header and "sparc_yaw" not in header


def test_evaluate_counts_aborted_episodes(trained):
    _, eps = trained

    class Bad:
        def as_fn(self, rng):
            return lambda obs: np.array([np.nan, 0.0])

    rep = evaluate({"ibc": Bad()}, eps)
    assert rep.aborted == sum(1 for e in eps if np.linalg.norm(e.facilitator[0] - e.goal) > 0.02)


def test_evaluate_rejects_empty():
    with pytest.raises(ReportError):
        evaluate({}, [])
