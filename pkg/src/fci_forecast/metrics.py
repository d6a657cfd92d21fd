"""Forecast metrics, MAPE outlier curves, weekday tables and seed aggregates.

All functions expect values on the original (denormalized) scale.
"""
from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import AlignmentError, ZeroDenominatorError

WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
DEFAULT_THRESHOLDS = tuple(np.round(np.arange(0.0, 1.0001, 0.01), 2))


def mse(pred, actual):
    d = np.asarray(pred, float) - np.asarray(actual, float)
    return float(np.mean(d * d))


def mae(pred, actual):
    return float(np.mean(np.abs(np.asarray(pred, float) - np.asarray(actual, float))))


def mape(pred, actual):
    """Mean absolute percentage error as a fraction (0.1 == 10 %)."""
    pred, actual = np.asarray(pred, float), np.asarray(actual, float)
    if np.any(actual == 0):
        raise ZeroDenominatorError("MAPE is undefined when an actual value is 0")
    return float(np.mean(np.abs((actual - pred) / actual)))


def metrics(pred, actual):
    """Return ``(MSE, MAE, MAPE)``; raises :class:`ZeroDenominatorError` on zero actuals."""
    pred, actual = np.asarray(pred, float), np.asarray(actual, float)
    if pred.shape != actual.shape or pred.size == 0:
        raise ValueError(f"need equal, non-empty shapes, got {pred.shape} and {actual.shape}")
    return mse(pred, actual), mae(pred, actual), mape(pred, actual)


@dataclass(frozen=True)
class WindowScore:
    origin: np.datetime64
    mae: float
    mse: float
    mape: float | None  # None when the window contains a zero actual
    n_steps: int = 24

    @property
    def weekday(self):
        return int((self.origin.astype("datetime64[D]").astype("int64") + 3) % 7)

    @property
    def last(self):
        return self.origin + np.timedelta64(self.n_steps - 1, "h")


def score_windows(pred, actual, origins):
    """Per-window scores for ``(N, h, D)`` forecasts issued at ``origins`` (datetime64)."""
    pred, actual = np.asarray(pred, float), np.asarray(actual, float)
    scores = []
    for p, a, t in zip(pred, actual, np.asarray(origins, dtype="datetime64[h]")):
        try:
            m = mape(p, a)
        except ZeroDenominatorError:
            m = None
        scores.append(WindowScore(t, mae(p, a), mse(p, a), m, len(p)))
    return scores


def outlier_curve(scores, thresholds=DEFAULT_THRESHOLDS):
    """Windows whose MAPE exceeds each threshold.

    Returns ``(counts, fractions)``; windows with undefined MAPE are left
    out of both numerator and denominator.
    """
    thresholds = np.asarray(thresholds, float)
    if np.any(np.diff(thresholds) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    values = np.array([s.mape for s in scores if s.mape is not None], float)
    counts = np.array([(values > t).sum() for t in thresholds], dtype=int)
    fractions = counts / len(values) if len(values) else np.zeros(len(thresholds))
    return counts, fractions


def hourly_outlier_curve(pred, actual, thresholds=DEFAULT_THRESHOLDS):
    """Same as :func:`outlier_curve` but counting single hours by absolute percentage error."""
    pred, actual = np.asarray(pred, float).ravel(), np.asarray(actual, float).ravel()
    keep = actual != 0
    ape = np.abs((actual[keep] - pred[keep]) / actual[keep])
    counts = np.array([(ape > t).sum() for t in thresholds], dtype=int)
    return counts, counts / max(len(ape), 1)


def weekday_breakdown(scores):
    """Mean window MAE per weekday, Monday first; ``nan`` marks empty weekdays."""
    sums, counts = np.zeros(7), np.zeros(7, dtype=int)
    for s in scores:
        if s.origin.astype("datetime64[D]") != s.last.astype("datetime64[D]"):
            raise AlignmentError(f"window at {s.origin} spans two calendar days")
        sums[s.weekday] += s.mae
        counts[s.weekday] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return means, counts


def aggregate_seeds(values):
    """``(mean, sample std)``; the std is ``None`` for a single value."""
    values = np.asarray(values, float)
    if values.size == 0:
        raise ValueError("nothing to aggregate")
    std = float(values.std(ddof=1)) if values.size > 1 else None
    return float(values.mean()), std


def reduction(mae_without, mae_with):
    """Relative error reduction from adding information, as a fraction."""
    return (mae_without - mae_with) / mae_without


@dataclass
class EvalReport:
    """Scores of one model on one test set for one seed."""

    name: str
    scores: list
    mae: float
    mse: float
    mape: float | None
    mape_excluded: int
    thresholds: tuple = DEFAULT_THRESHOLDS
    outlier_counts: np.ndarray = field(default=None, repr=False)
    outlier_fractions: np.ndarray = field(default=None, repr=False)
    hourly_outlier_counts: np.ndarray = field(default=None, repr=False)
    hourly_outlier_fractions: np.ndarray = field(default=None, repr=False)
    weekday_mae: np.ndarray = field(default=None, repr=False)

    def outlier_fraction(self, threshold):
        values = [s.mape for s in self.scores if s.mape is not None]
        return float(np.mean(np.asarray(values) > threshold)) if values else 0.0


def evaluate(pred, actual, origins, name="model", thresholds=DEFAULT_THRESHOLDS):
    """Score denormalized ``(N, h, D)`` forecasts against actuals."""
    pred, actual = np.asarray(pred, float), np.asarray(actual, float)
    scores = score_windows(pred, actual, origins)
    defined = [s.mape for s in scores if s.mape is not None]
    counts, fractions = outlier_curve(scores, thresholds)
    h_counts, h_fractions = hourly_outlier_curve(pred, actual, thresholds)
    try:
        weekday = weekday_breakdown(scores)[0]
    except AlignmentError:
        weekday = np.full(7, np.nan)
    return EvalReport(
        name=name,
        scores=scores,
        mae=mae(pred, actual) if pred.size else float("nan"),
        mse=mse(pred, actual) if pred.size else float("nan"),
        mape=float(np.mean(defined)) if defined else None,
        mape_excluded=len(scores) - len(defined),
        thresholds=tuple(thresholds),
        outlier_counts=counts,
        outlier_fractions=fractions,
        hourly_outlier_counts=h_counts,
        hourly_outlier_fractions=h_fractions,
        weekday_mae=weekday,
    )


# ---------------------------------------------------------------- report files


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(header, rows):
    import io

    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(header)
    out.writerows(rows)
    return buf.getvalue()


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else repr(float(x))


def write_windows_csv(report: EvalReport, path):
    rows = [
        (str(s.origin.astype("datetime64[s]")), _fmt(s.mae), _fmt(s.mse), _fmt(s.mape), WEEKDAYS[s.weekday])
        for s in report.scores
    ]
    atomic_write_text(path, _csv_text(("origin", "MAE", "MSE", "MAPE", "weekday"), rows))


def write_outliers_csv(report: EvalReport, path):
    rows = [
        (f"{t:g}", int(c), _fmt(f), int(hc), _fmt(hf))
        for t, c, f, hc, hf in zip(
            report.thresholds,
            report.outlier_counts,
            report.outlier_fractions,
            report.hourly_outlier_counts,
            report.hourly_outlier_fractions,
        )
    ]
    atomic_write_text(path, _csv_text(("threshold", "count", "fraction", "hourly_count", "hourly_fraction"), rows))


def write_weekday_csv(report: EvalReport, path):
    rows = [(d, _fmt(v)) for d, v in zip(WEEKDAYS, report.weekday_mae)]
    atomic_write_text(path, _csv_text(("weekday", "MAE"), rows))


def write_summary_csv(rows, path):
    """``rows`` are ``(model, seed, split, metric, value)`` tuples."""
    atomic_write_text(
        path,
        _csv_text(("model", "seed", "split", "metric", "value"), [(m, s, sp, k, _fmt(v)) for m, s, sp, k, v in rows]),
    )


def read_windows_csv(path, name=None):
    """Rebuild an :class:`EvalReport` (window-level fields only) from ``windows.csv``."""
    df = pd.read_csv(path, float_precision="round_trip")
    scores = [
        WindowScore(
            np.datetime64(o, "h"), float(a), float(s), None if pd.isna(p) else float(p)
        )
        for o, a, s, p in zip(df["origin"], df["MAE"], df["MSE"], df["MAPE"])
    ]
    counts, fractions = outlier_curve(scores)
    defined = [s.mape for s in scores if s.mape is not None]
    try:
        weekday = weekday_breakdown(scores)[0]
    except AlignmentError:
        weekday = np.full(7, np.nan)
    return EvalReport(
        name=name or Path(path).parent.name,
        scores=scores,
        mae=float(np.mean([s.mae for s in scores])) if scores else float("nan"),
        mse=float(np.mean([s.mse for s in scores])) if scores else float("nan"),
        mape=float(np.mean(defined)) if defined else None,
        mape_excluded=len(scores) - len(defined),
        outlier_counts=counts,
        outlier_fractions=fractions,
        weekday_mae=weekday,
    )
