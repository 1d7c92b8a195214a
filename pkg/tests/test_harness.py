"""Metrics, normalization and comparison artifacts"""

import math

import numpy as np
import pandas as pd
import pytest

from src.errors import ConfigurationError
from src.harness import (
    REPORT_CHANNELS,
    RunReport,
    compare_report,
    evaluate_trace,
    max_abs_error,
    normalize_reports,
    rmse,
)
from src.observer import REFERENCE_GAINS, default_gain_template, open_loop_rollout, run_observer


def test_rmse_and_max_abs_of_two_errors():
    assert rmse([3.0, 4.0], [0.0, 0.0]) == pytest.approx(math.sqrt(12.5))
    assert max_abs_error([3.0, -4.0], [0.0, 0.0]) == 4.0


def test_metrics_of_identical_series_are_zero():
    series = np.linspace(-1.0, 1.0, 50)
    assert rmse(series, series.copy()) == 0.0
    assert max_abs_error(series, series.copy()) == 0.0


def test_metrics_reject_bad_lengths():
    with pytest.raises(ConfigurationError):
        rmse([1.0, 2.0], [1.0])
    with pytest.raises(ConfigurationError):
        max_abs_error([], [])


def test_normalization_by_worst_contender():
    reports = [
        RunReport("a", "lap", rmse={"vx": 1.0, "beta": 0.0}, max_abs={"vx": 2.0, "beta": 0.0}),
        RunReport("b", "lap", rmse={"vx": 4.0, "beta": 0.0}, max_abs={"vx": 1.0, "beta": 0.0}),
    ]
    normalize_reports(reports)
    assert reports[0].normalized["rmse"]["vx"] == 0.25
    assert reports[1].normalized["rmse"]["vx"] == 1.0
    assert reports[0].normalized["max_abs"]["vx"] == 1.0
    assert reports[1].normalized["max_abs"]["vx"] == 0.5
    assert reports[0].normalized["rmse"]["beta"] == 1.0


def test_trace_against_itself_scores_zero(clean_dataset, plant_config):
    trace = open_loop_rollout(clean_dataset, plant_config)
    report = evaluate_trace(trace, clean_dataset, "perfect")
    assert set(report.rmse) == set(REPORT_CHANNELS)
    assert max(report.rmse.values()) <= 1e-9
    assert report.predictor == "plant"
    assert report.gains_hash == ""


def test_horizon_mismatch_is_rejected(noisy_dataset, benchmark_config, clean_dataset):
    trace = open_loop_rollout(noisy_dataset, benchmark_config)
    short = type(clean_dataset)(clean_dataset.dt, clean_dataset.frame.iloc[:100].copy(),
                                dict(clean_dataset.metadata))
    with pytest.raises(ConfigurationError):
        evaluate_trace(trace, short, "open_loop")


def test_compare_report_writes_artifacts(noisy_dataset, benchmark_config, tmp_path):
    k = default_gain_template().vector(REFERENCE_GAINS)
    traces = {
        "open_loop": open_loop_rollout(noisy_dataset, benchmark_config),
        "reference": run_observer(noisy_dataset, benchmark_config, k=k),
    }
    reports = compare_report(traces, noisy_dataset, out_dir=str(tmp_path))
    assert [r.contender for r in reports] == ["open_loop", "reference"]
    assert reports[1].gains_hash != ""
    for name in REPORT_CHANNELS:
        values = [r.normalized["rmse"][name] for r in reports]
        assert max(values) == 1.0
        assert all(0.0 <= v <= 1.0 for v in values)

    bars = pd.read_csv(tmp_path / "short_bars.csv")
    assert list(bars.columns) == ["dataset", "contender", "channel", "rmse", "max_abs"]
    assert len(bars) == 2 * len(REPORT_CHANNELS)
    spider = pd.read_csv(tmp_path / "short_spider.csv")
    assert len(spider) == 4
    summary = (tmp_path / "short_summary.txt").read_text(encoding="utf-8")
    assert "open_loop RMSE" in summary and "fy_rr" in summary


def test_compare_report_needs_traces(noisy_dataset):
    with pytest.raises(ConfigurationError):
        compare_report({}, noisy_dataset)
