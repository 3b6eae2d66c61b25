"""Metric tables and figures.

Quartiles use linear interpolation between order statistics (numpy's
default ``percentile`` rule): the q-quantile of n sorted values sits at
fractional index q * (n - 1). Whiskers follow Tukey: the most extreme
observations inside [Q1 - 1.5 IQR, Q3 + 1.5 IQR], never inside the box.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .errors import DataError

METRIC_COLUMNS = ("subject_id", "method", "sparsity", "metric", "value")
SUMMARY_COLUMNS = (
    "method", "sparsity", "metric", "n", "mean", "sd", "q1", "median", "q3",
    "whisker_low", "whisker_high",
)


def _fmt(v):
    return repr(float(v))


def sort_rows(rows):
    return sorted(rows, key=lambda r: (r[0], r[1], int(r[2]), r[3]))


def write_metrics(rows, path):
    """Write (subject_id, method, sparsity, metric, value) rows, sorted."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for s, m, k, name, v in sort_rows(rows):
            w.writerow((s, m, int(k), name, _fmt(v)))


def read_metrics(path):
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if header is None or tuple(header) != METRIC_COLUMNS:
        raise DataError(f"{path}: expected header {','.join(METRIC_COLUMNS)}")
    if not rows:
        raise DataError(f"{path}: no metric rows")
    out = []
    for i, r in enumerate(rows, start=2):
        if len(r) != 5:
            raise DataError(f"{path}:{i}: expected 5 fields, got {len(r)}")
        try:
            out.append((r[0], r[1], int(r[2]), r[3], float(r[4])))
        except ValueError as exc:
            raise DataError(f"{path}:{i}: {exc}") from None
    return out


def box_stats(values):
    """Mean, sample sd (0 for one value), quartiles and Tukey whiskers."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise DataError("no values to summarise")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    fence = (v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)
    inside = v[fence]
    # interpolated quartiles can pass the innermost datum; clamp like matplotlib
    lo, hi = min(inside.min(), q1), max(inside.max(), q3)
    return {
        "n": int(v.size),
        "mean": float(v.mean()),
        "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0,
        "q1": float(q1),
        "median": float(med),
        "q3": float(q3),
        "whisker_low": float(lo),
        "whisker_high": float(hi),
        "fliers": v[~fence].tolist(),
    }


def summarize(rows):
    """Group rows by (method, sparsity, metric); returns a sorted list of dicts."""
    if not rows:
        raise DataError("no metric rows")
    groups = {}
    for _, method, sparsity, metric, value in rows:
        groups.setdefault((method, int(sparsity), metric), []).append(value)
    out = []
    for key in sorted(groups):
        stats = box_stats(groups[key])
        out.append(dict(zip(("method", "sparsity", "metric"), key), **stats))
    return out


def write_summary(summary, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in summary:
            w.writerow([s["method"], s["sparsity"], s["metric"], s["n"]]
                       + [_fmt(s[c]) for c in SUMMARY_COLUMNS[4:]])


def write_table(summary, path, metric="lsd"):
    """Method rows by sparsity columns of "mean (sd)", highest sparsity first."""
    sel = [s for s in summary if s["metric"] == metric]
    if not sel:
        raise DataError(f"no rows for metric {metric!r}")
    levels = sorted({s["sparsity"] for s in sel}, reverse=True)
    methods = sorted({s["method"] for s in sel})
    cell = {(s["method"], s["sparsity"]): f"{s['mean']:.2f} ({s['sd']:.2f})" for s in sel}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method"] + [str(k) for k in levels])
        for m in methods:
            w.writerow([m] + [cell.get((m, k), "") for k in levels])


# ------------------------------------------------------------------- figures


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "hrtf-dunet"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def _save_svg(fig, path):
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    Path(path).write_text(buf.getvalue())


def boxplot_svg(summary, path, metric="lsd"):
    """Box plot per (method, sparsity) drawn from the summary geometry."""
    sel = [s for s in summary if s["metric"] == metric]
    if not sel:
        raise DataError(f"no rows for metric {metric!r}")
    plt = _pyplot()
    stats = [
        {"label": f"{s['method']}\n{s['sparsity']}", "med": s["median"], "q1": s["q1"],
         "q3": s["q3"], "whislo": s["whisker_low"], "whishi": s["whisker_high"],
         "fliers": s["fliers"], "mean": s["mean"]}
        for s in sel
    ]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.6 * len(stats)), 4.0))
    ax.bxp(stats, showmeans=True)
    ax.set_ylabel(f"{metric.upper()} (dB)" if metric in ("lsd", "ild") else metric.upper())
    ax.tick_params(axis="x", labelsize=6)
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def magnitude_svg(path, frequencies, curves, title=""):
    """Magnitude responses (dB) over a log-frequency axis; ``curves`` maps label -> dB."""
    plt = _pyplot()
    f = np.asarray(frequencies, dtype=float)
    keep = f > 0
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    for label, db in curves.items():
        ax.semilogx(f[keep], np.asarray(db)[keep], label=label, linewidth=1.0)
    ax.set_xlabel("Frequency (Hz)")
    ax.set_ylabel("Magnitude (dB)")
    ax.set_title(title)
    ax.legend(fontsize=7)
    ax.grid(True, which="both", linewidth=0.3)
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def report(metrics_path, out_dir):
    """metrics CSV -> summary.csv, table.csv and one box plot per metric."""
    rows = read_metrics(metrics_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(rows)
    write_summary(summary, out / "summary.csv")
    written = [out / "summary.csv"]
    for metric in sorted({s["metric"] for s in summary}):
        write_table(summary, out / f"table_{metric}.csv", metric)
        boxplot_svg(summary, out / f"boxplot_{metric}.svg", metric)
        written += [out / f"table_{metric}.csv", out / f"boxplot_{metric}.svg"]
    return written
