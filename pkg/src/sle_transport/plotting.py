"""SVG figures for summaries and time series.

Output is byte-reproducible: the SVG id salt is fixed and no date is written.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.ticker import LogLocator  # noqa: E402

from .io import read_summary, read_timeseries  # noqa: E402

RC = {
    "svg.hashsalt": "sle-transport",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}
MARKERS = "osD^v<>ph*"


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def cubic_trend(x, y, n_points: int = 200):
    """Least-squares cubic through (x, y) sampled on a dense grid; None if
    there are fewer than four distinct x values."""
    x = np.asarray(x, dtype=float)
    if np.unique(x).size < 4:
        return None
    coeffs = np.polynomial.polynomial.polyfit(x, y, 3)
    xs = np.linspace(x.min(), x.max(), n_points)
    return xs, np.polynomial.polynomial.polyval(xs, coeffs)


def _series_label(row, vary_t, vary_site):
    label = row["model"]
    if vary_t:
        label += f", {row['temperature']:g} K"
    if vary_site:
        label += f", site {int(row['initial_site'])}"
    return label


def plot_summary(rows, path, error: str = "se"):
    """p_trap at the final time against tau_c, one series per model (and per
    temperature / initial site when those vary), with cubic trend lines."""
    if not rows:
        raise ValueError("summary holds no rows")
    vary_t = len({r["temperature"] for r in rows}) > 1
    vary_site = len({r["initial_site"] for r in rows}) > 1
    groups = {}
    for r in rows:
        groups.setdefault(_series_label(r, vary_t, vary_site), []).append(r)
    err_key = {"se": "p_trap_se", "sd": "p_trap_sd"}[error]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        for i, (label, g) in enumerate(groups.items()):
            g = sorted(g, key=lambda r: r["tau_c"])
            x = np.array([r["tau_c"] for r in g])
            y = np.array([r["p_trap_mean"] for r in g])
            e = np.array([r[err_key] for r in g])
            color = f"C{i % 10}"
            ax.errorbar(x, y, yerr=e, fmt=MARKERS[i % len(MARKERS)], color=color,
                        ms=4, capsize=2, label=label)
            trend = cubic_trend(x, y)
            if trend is not None:
                ax.plot(*trend, "-", color=color, lw=1)
        t_end = rows[0]["t"]
        ax.set_xlabel(r"$\tau_c$ (fs)")
        ax.set_ylabel(rf"$P_{{trap}}$({t_end / 1000:g} ps)")
        ax.legend(fontsize=7)
        fig.tight_layout()
        return _save(fig, path)


def plot_timeseries(series: dict, path, title: str | None = None):
    """Stacked panels: p_trap, total coherence and mean displacement vs time."""
    t = series["t"]
    if t.size == 0:
        raise ValueError("time series is empty")
    panels = [
        ("p_trap_mean", "p_trap_sd", r"$P_{trap}$"),
        ("coherence_mean", "coherence_sd", "total coherence"),
        ("displacement_mean", "displacement_sd", r"displacement ($\AA$)"),
    ]
    with plt.rc_context(RC):
        fig, axes = plt.subplots(len(panels), 1, sharex=True, figsize=(5.0, 6.0))
        for ax, (m, s, label) in zip(axes, panels):
            ax.plot(t / 1000, series[m], "-", color="C0", lw=1)
            ax.fill_between(t / 1000, series[m] - series[s], series[m] + series[s],
                            color="C0", alpha=0.2, lw=0)
            ax.set_ylabel(label)
        axes[-1].set_xlabel("t (ps)")
        if title:
            axes[0].set_title(title, fontsize=9)
        fig.tight_layout()
        return _save(fig, path)


def plot_survival(series: dict, path, title: str | None = None):
    """P_surv on a log axis against time, decade ticks."""
    t = series["t"]
    p = series["p_surv_mean"]
    keep = p > 0
    if not keep.any():
        raise ValueError("survival probability has no positive values")
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        ax.semilogy(t[keep] / 1000, p[keep], "-", color="C0", lw=1)
        ax.yaxis.set_major_locator(LogLocator(base=10.0))
        ax.set_xlabel("t (ps)")
        ax.set_ylabel(r"$P_{surv}$")
        if title:
            ax.set_title(title, fontsize=9)
        fig.tight_layout()
        return _save(fig, path)


def plot_csv(csv_path, out_path=None, kind: str = "auto"):
    """Render a CSV written by this package; returns the SVG path."""
    from .io import csv_kind

    csv_path = Path(csv_path)
    if kind == "auto":
        kind = csv_kind(csv_path)
        if kind == "rates":
            raise ValueError("rate tables have no plot")
    stem = csv_path.with_suffix("")
    if kind == "summary":
        return plot_summary(read_summary(csv_path), out_path or f"{stem}.svg")
    if kind == "timeseries":
        return plot_timeseries(read_timeseries(csv_path), out_path or f"{stem}.svg", csv_path.stem)
    if kind == "survival":
        return plot_survival(read_timeseries(csv_path), out_path or f"{stem}_survival.svg",
                             csv_path.stem)
    raise ValueError(f"unknown plot kind {kind!r}")
