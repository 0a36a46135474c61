"""SVG convergence plots."""
from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from .oracle import DiagnosticsRecord

PLOTTABLE = tuple(c for c in DiagnosticsRecord.COLUMNS if c != "iteration")
LOG_DEFAULT = {"mspbe"}


def _check_metric(metric: str):
    if metric not in PLOTTABLE:
        raise ValueError(f"unknown metric {metric!r}; choose from {', '.join(PLOTTABLE)}")


def series_from_results(results, metric: str) -> dict:
    """``{label: (iterations, mean values)}``; diverged runs are left out of the mean.

    A label whose runs all diverged is drawn from its first run, truncated at
    the divergence point, so the blow-up remains visible.
    """
    _check_metric(metric)
    groups = {}
    for r in results:
        groups.setdefault(r.label, []).append(r)
    out = {}
    for label, group in groups.items():
        ok = [r for r in group if not r.diverged] or group[:1]
        its = np.array([rec.iteration for rec in ok[0].records])
        n = min(len(r.records) for r in ok)
        vals = np.array([[getattr(rec, metric) for rec in r.records[:n]] for r in ok], dtype=float)
        out[label] = (its[:n], vals.mean(axis=0))
    return out


def series_from_columns(columns: dict, metric: str, label: str) -> dict:
    """Mean over runs of a parsed trace file (see ``harness.read_trace_csv``)."""
    _check_metric(metric)
    its = columns["iteration"]
    vals = columns[metric].astype(float)
    uniq = np.unique(its)
    means = np.array([vals[its == i].mean() for i in uniq])
    return {label: (uniq, means)}


def emit_plot(data, metric, path, log_scale: bool | None = None, title: str | None = None) -> Path:
    """Write an SVG line chart of ``metric`` against iteration.

    Parameters
    ----------
    data : list of RunResult, or dict ``{label: (iterations, values)}``
        One curve is drawn per label.  A dict is only accepted with a single
        metric.
    metric : str or tuple of str
        A diagnostics column, or several columns to overlay (each label then
        contributes one curve per metric).
    log_scale : bool, optional
        Logarithmic y axis; defaults to on for MSPBE.
    """
    metrics = (metric,) if isinstance(metric, str) else tuple(metric)
    if not metrics:
        raise ValueError("no metric given")
    for m in metrics:
        _check_metric(m)
    curves = {}
    for m in metrics:
        if isinstance(data, dict):
            if len(metrics) > 1:
                raise ValueError("precomputed series support a single metric")
            series = data
        else:
            series = series_from_results(data, m)
        for label, (x, y) in series.items():
            key = label if len(metrics) == 1 else f"{label}: {m}"
            curves[key] = (np.asarray(x), np.asarray(y, dtype=float))
    if not curves or all(len(x) == 0 for x, _ in curves.values()):
        raise ValueError("nothing to plot: empty series")
    if log_scale is None:
        log_scale = len(metrics) == 1 and metrics[0] in LOG_DEFAULT

    path = Path(path)
    with matplotlib.rc_context({"svg.hashsalt": "rotd", "svg.fonttype": "path"}):
        fig = Figure(figsize=(6.4, 4.2))
        FigureCanvasSVG(fig)
        ax = fig.add_subplot()
        for label, (x, y) in curves.items():
            if log_scale:
                y = np.where(y > 0, y, np.nan)
            ax.plot(x, y, label=label, linewidth=1.4)
        if log_scale:
            ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel(" / ".join(metrics))
        if title:
            ax.set_title(title)
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize="small")
        fig.tight_layout()
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    return path
