"""
Evaluation Metrics and Comparison Reports

RMSE and maximum absolute error of estimated channels against ground truth,
per-contender reports normalized by the worst contender, and the CSV /
plain-text artifacts of a comparison run.
"""

import io
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from .dataio import Dataset
from .dynamics import FORCE_LABELS, sideslip_angle
from .errors import ConfigurationError
from .logger import get_logger
from .observer import EstimateTrace
from .utils import ensure_parent_dir, hash_vector

logger = get_logger("harness")

REPORT_CHANNELS = ("vx", "beta") + FORCE_LABELS
METRICS = ("rmse", "max_abs")


# =============================================================================
# Metrics
# =============================================================================

def _errors(estimate: Sequence[float], truth: Sequence[float]) -> np.ndarray:
    estimate = np.asarray(estimate, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if estimate.size != truth.size:
        raise ConfigurationError(f"series lengths differ: {estimate.size} vs {truth.size}")
    if estimate.size == 0:
        raise ConfigurationError("metrics need at least one sample")
    return estimate - truth


def rmse(estimate: Sequence[float], truth: Sequence[float]) -> float:
    """Root-mean-square error"""
    e = _errors(estimate, truth)
    return float(np.sqrt(np.mean(e * e)))


def max_abs_error(estimate: Sequence[float], truth: Sequence[float]) -> float:
    """Largest absolute error"""
    return float(np.max(np.abs(_errors(estimate, truth))))


def truth_channel(dataset: Dataset, name: str, eps_v: float = 0.5) -> np.ndarray:
    """Ground-truth series; β is derived from vx/vy"""
    if name == "beta":
        return sideslip_angle(dataset.channel("vx"), dataset.channel("vy"), eps_v)
    return dataset.channel(name)


# =============================================================================
# Reports
# =============================================================================

@dataclass
class RunReport:
    """
    Metrics of one contender on one dataset.

    Attributes:
        contender: Display name of the estimator
        dataset: Dataset (lap) identifier
        predictor: Predictor id used by the contender
        gains_hash: Short hash of the gain vector (empty for open loop)
        rmse, max_abs: Metric per channel
        normalized: Metric per channel divided by the worst contender
    """
    contender: str
    dataset: str
    predictor: str = ""
    gains_hash: str = ""
    rmse: Dict[str, float] = field(default_factory=dict)
    max_abs: Dict[str, float] = field(default_factory=dict)
    normalized: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def metric(self, metric: str) -> Dict[str, float]:
        if metric not in METRICS:
            raise ConfigurationError(f"unknown metric '{metric}'")
        return self.rmse if metric == "rmse" else self.max_abs


def evaluate_trace(trace: EstimateTrace, dataset: Dataset, contender: str,
                   channels: Sequence[str] = REPORT_CHANNELS) -> RunReport:
    """
    Metrics of one trace against a dataset's ground truth.

    Raises:
        ConfigurationError: the trace does not cover the dataset horizon
        MissingChannelError: a channel missing from the trace or the dataset
    """
    if trace.n_samples != dataset.n_samples:
        raise ConfigurationError(
            f"trace '{contender}' has {trace.n_samples} samples, dataset has {dataset.n_samples}"
        )
    gains = trace.metadata.get("gains")
    report = RunReport(
        contender=contender,
        dataset=dataset.name,
        predictor=str(trace.metadata.get("predictor", "")),
        gains_hash=hash_vector(list(gains.values())) if gains else "",
    )
    for name in channels:
        estimate = trace.channel(name)
        truth = truth_channel(dataset, name, trace.eps_v)
        report.rmse[name] = rmse(estimate, truth)
        report.max_abs[name] = max_abs_error(estimate, truth)
    return report


def normalize_reports(reports: List[RunReport]):
    """
    Divide every metric by the worst contender's value.

    The worst contender gets 1; a channel where every contender is exact
    gets 1 throughout.
    """
    if not reports:
        return
    for metric in METRICS:
        for name in reports[0].metric(metric):
            worst = max(r.metric(metric)[name] for r in reports)
            for r in reports:
                value = r.metric(metric)[name]
                r.normalized.setdefault(metric, {})[name] = value / worst if worst > 0 else 1.0


def bar_frame(reports: List[RunReport]) -> pd.DataFrame:
    """Long table (dataset, contender, channel, rmse, max_abs)"""
    rows = []
    for r in reports:
        for name in r.rmse:
            rows.append({"dataset": r.dataset, "contender": r.contender, "channel": name,
                         "rmse": r.rmse[name], "max_abs": r.max_abs[name]})
    return pd.DataFrame(rows, columns=["dataset", "contender", "channel", "rmse", "max_abs"])


def spider_frame(reports: List[RunReport]) -> pd.DataFrame:
    """Normalized indices, one row per (contender, metric), one column per channel"""
    rows = []
    for r in reports:
        for metric in METRICS:
            row = {"dataset": r.dataset, "contender": r.contender, "metric": metric}
            row.update(r.normalized.get(metric, {}))
            rows.append(row)
    channels = list(reports[0].rmse) if reports else []
    return pd.DataFrame(rows, columns=["dataset", "contender", "metric"] + channels)


def summary_table(reports: List[RunReport], title: str) -> Table:
    table = Table(title=title)
    table.add_column("channel")
    for r in reports:
        table.add_column(f"{r.contender} RMSE", justify="right")
        table.add_column(f"{r.contender} max", justify="right")
    channels = list(reports[0].rmse) if reports else []
    for name in channels:
        cells = [name]
        for r in reports:
            cells += [f"{r.rmse[name]:.4g}", f"{r.max_abs[name]:.4g}"]
        table.add_row(*cells)
    return table


def render_summary(reports: List[RunReport], title: str) -> str:
    """Plain-text rendering of the summary table"""
    console = Console(file=io.StringIO(), record=True, width=160, color_system=None)
    console.print(summary_table(reports, title))
    return console.export_text()


def write_reports(reports: List[RunReport], out_dir: str, stem: str, show: bool = True) -> Dict[str, str]:
    """Write bar/spider CSVs and the text summary; returns the paths"""
    paths = {
        "bars": os.path.join(out_dir, f"{stem}_bars.csv"),
        "spider": os.path.join(out_dir, f"{stem}_spider.csv"),
        "summary": os.path.join(out_dir, f"{stem}_summary.txt"),
    }
    ensure_parent_dir(paths["bars"])
    bar_frame(reports).to_csv(paths["bars"], index=False, float_format="%.17g", lineterminator="\n")
    spider_frame(reports).to_csv(paths["spider"], index=False, float_format="%.17g",
                                 lineterminator="\n")
    text = render_summary(reports, stem)
    with open(paths["summary"], "w", encoding="utf-8") as f:
        f.write(text)
    if show:
        Console().print(summary_table(reports, stem))
    logger.info(f"Reports written to {out_dir}")
    return paths


def compare_report(traces: Dict[str, EstimateTrace], dataset: Dataset,
                   out_dir: Optional[str] = None,
                   channels: Sequence[str] = REPORT_CHANNELS,
                   show: bool = False) -> List[RunReport]:
    """
    Compare contenders on one dataset.

    Args:
        traces: Estimate trace per contender name
        dataset: Dataset with ground truth
        out_dir: When given, bar/spider CSVs and the summary are written there
        channels: Channels scored
        show: Print the summary table to the console

    Returns:
        One normalized RunReport per contender, in input order
    """
    if not traces:
        raise ConfigurationError("compare_report needs at least one trace")
    reports = [evaluate_trace(trace, dataset, name, channels) for name, trace in traces.items()]
    normalize_reports(reports)
    if out_dir is not None:
        write_reports(reports, out_dir, dataset.name, show=show)
    return reports
