"""CSV formats written and read by the command line tool.

Floats are written with ``repr`` so the text round-trips exactly and the same
numbers always give the same bytes.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .ensemble import EnsembleStatistics

TIMESERIES_HEAD = ["t", "p_trap_mean", "p_trap_sd", "p_trap_se", "p_surv_mean",
                   "coherence_mean", "coherence_sd", "displacement_mean", "displacement_sd"]
SUMMARY_HEAD = ["model", "temperature", "initial_site", "tau_c", "t",
                "p_trap_mean", "p_trap_sd", "p_trap_se", "n_trajectories"]
RATES_HEAD = ["alpha", "beta", "energy_gap", "omega", "tau_c_opt", "gamma_inf"]


class CSVFormatError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def _write(target, header, rows):
    """Write to a path, or to an open text stream."""
    if hasattr(target, "write"):
        w = csv.writer(target, lineterminator="\n")
        w.writerow(header)
        w.writerows([_fmt(x) for x in row] for row in rows)
        return
    path = Path(target)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        _write(fh, header, rows)


def timeseries_header(n_sites: int) -> list[str]:
    return TIMESERIES_HEAD + [f"pop_{i}" for i in range(1, n_sites + 1)]


def write_timeseries(path, stats: EnsembleStatistics):
    n = stats.mean["site_populations"].shape[-1]
    cols = [
        stats.times,
        stats.mean["p_trap"], stats.sd["p_trap"], stats.se["p_trap"],
        stats.p_surv_mean,
        stats.mean["total_coherence"], stats.sd["total_coherence"],
        stats.mean["mean_displacement"], stats.sd["mean_displacement"],
    ] + [stats.mean["site_populations"][:, i] for i in range(n)]
    _write(path, timeseries_header(n), zip(*cols))


def write_summary(path, rows):
    """``rows``: dicts keyed by SUMMARY_HEAD."""
    _write(path, SUMMARY_HEAD, ([r[k] for k in SUMMARY_HEAD] for r in rows))


def write_rates(path, rows):
    _write(path, RATES_HEAD, ([r[k] for k in RATES_HEAD] for r in rows))


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise CSVFormatError(f"{path}: cannot read ({exc.strerror})") from None
    if not rows or not rows[0]:
        raise CSVFormatError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise CSVFormatError(f"{path}:{i}: expected {len(header)} fields, got {len(row)}")
    return header, body


def _floats(path, header, body, names):
    out = {}
    for name in names:
        j = header.index(name)
        try:
            out[name] = np.array([float(r[j]) for r in body])
        except ValueError:
            raise CSVFormatError(f"{path}: column {name} holds a non-numeric value") from None
    return out


def read_timeseries(path) -> dict:
    header, body = read_csv(path)
    if header[:len(TIMESERIES_HEAD)] != TIMESERIES_HEAD:
        raise CSVFormatError(f"{path}: not a time-series file (header {header[:3]}...)")
    if not body:
        raise CSVFormatError(f"{path}: no data rows")
    return _floats(path, header, body, header)


def read_summary(path) -> list[dict]:
    header, body = read_csv(path)
    if header != SUMMARY_HEAD:
        raise CSVFormatError(f"{path}: not a summary file (header {header[:3]}...)")
    if not body:
        raise CSVFormatError(f"{path}: no data rows")
    num = _floats(path, header, body, SUMMARY_HEAD[1:])
    return [{"model": r[0], **{k: num[k][i] for k in SUMMARY_HEAD[1:]}}
            for i, r in enumerate(body)]


def csv_kind(path) -> str:
    header, _ = read_csv(path)
    if header == SUMMARY_HEAD:
        return "summary"
    if header[:len(TIMESERIES_HEAD)] == TIMESERIES_HEAD:
        return "timeseries"
    if header == RATES_HEAD:
        return "rates"
    raise CSVFormatError(f"{path}: unrecognised CSV header")
