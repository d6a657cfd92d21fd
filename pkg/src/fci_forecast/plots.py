"""SVG figures: MAPE outlier curves and weekday MAE bars."""
from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import AlignmentError, NoDataError  # noqa: E402
from .metrics import WEEKDAYS, atomic_write_text, outlier_curve, weekday_breakdown  # noqa: E402

# fixed ids and no timestamp so identical inputs give identical bytes
_RC = {"svg.hashsalt": "fci-forecast", "svg.fonttype": "none", "font.size": 9}


def _svg(fig):
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return buf.getvalue()


def _check(reports):
    if not reports or any(len(r.scores) == 0 for r in reports.values()):
        raise NoDataError("nothing to plot: a report has no windows")


def outlier_svg(reports, thresholds=None):
    """One curve per report: share of windows with MAPE above each threshold."""
    _check(reports)
    thresholds = np.round(np.arange(0.0, 0.5001, 0.01), 2) if thresholds is None else np.asarray(thresholds)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        for name, rep in reports.items():
            _, frac = outlier_curve(rep.scores, thresholds)
            ax.plot(thresholds * 100, frac * 100, marker="." if len(thresholds) < 3 else None, label=name)
        ax.set_xlabel("MAPE threshold [%]")
        ax.set_ylabel("windows above threshold [%]")
        ax.set_yscale("symlog", linthresh=1.0)
        ax.grid(alpha=0.3)
        ax.legend()
        fig.tight_layout()
        return _svg(fig)


def weekday_svg(reports):
    """Grouped bars of mean window MAE per weekday."""
    _check(reports)
    table = {name: weekday_breakdown(rep.scores)[0] for name, rep in reports.items()}
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        width = 0.8 / len(reports)
        x = np.arange(7)
        for i, (name, means) in enumerate(table.items()):
            ax.bar(x + (i - (len(reports) - 1) / 2) * width, np.nan_to_num(means), width, label=name)
        ax.set_xticks(x, WEEKDAYS)
        ax.set_ylabel("MAE")
        ax.grid(axis="y", alpha=0.3)
        ax.legend()
        fig.tight_layout()
        return _svg(fig)


def emit_plots(reports, out_dir):
    """Write ``outliers.svg`` and ``weekdays.svg`` for ``{name: EvalReport}``.

    The weekday plot is skipped when windows are not day-aligned.
    """
    out_dir = Path(out_dir)
    paths = {"outliers": out_dir / "outliers.svg"}
    atomic_write_text(paths["outliers"], outlier_svg(reports))
    try:
        text = weekday_svg(reports)
    except AlignmentError:
        return paths
    paths["weekdays"] = out_dir / "weekdays.svg"
    atomic_write_text(paths["weekdays"], text)
    return paths
