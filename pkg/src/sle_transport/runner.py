"""Run single ensembles and parameter sweeps from a RunConfig.

Each sweep point writes one time-series CSV.  ``manifest.json`` in the output
directory records the config hash, seed, code version and a SHA-256 of every
finished CSV; timestamps appear only there.  Re-running the same config
skips points whose CSV is already recorded with a matching hash.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from datetime import datetime, timezone
from hashlib import sha256
from importlib import metadata
from pathlib import Path

from .config import ConfigError, RunConfig, SweepPoint
from .ensemble import EnsembleConfig, default_workers, run_ensemble
from .io import read_timeseries, write_summary, write_timeseries
from .model import load_geometry, load_site_hamiltonian
from .noise import NoiseConfig, build_correlation_matrix

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SUMMARY = "summary.csv"


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def ensemble_config(cfg: RunConfig, point: SweepPoint) -> EnsembleConfig:
    h = load_site_hamiltonian(cfg.hamiltonian_path)
    g = load_geometry(cfg.geometry_path)
    spatial = point.spatial
    kwargs = {}
    if spatial.model == "exponential":
        kwargs["rc_angstrom"] = spatial.param
    elif spatial.model == "inverse_square" and spatial.param is not None:
        kwargs["beta"] = spatial.param
    corr = build_correlation_matrix(spatial.model, g, **kwargs)
    return EnsembleConfig(
        hamiltonian=h, geometry=g,
        noise=NoiseConfig(tau_c=point.tau_c, e_r=cfg.reorganization_energy,
                          temperature=point.temperature),
        correlation=corr, rates=cfg.rates, initial_site=point.initial_site,
        t_final=cfg.t_final, dt=cfg.dt, record_every=cfg.record_every,
        integrator=cfg.integrator,
    )


def run_point(cfg: RunConfig, point: SweepPoint, workers: int = 1):
    return run_ensemble(ensemble_config(cfg, point), cfg.n_trajectories, cfg.master_seed,
                        workers=workers)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _digest(path: Path) -> str:
    return sha256(path.read_bytes()).hexdigest()


class Manifest:
    def __init__(self, path: Path, data: dict):
        self.path = path
        self.data = data

    @classmethod
    def open(cls, out_dir: Path, cfg: RunConfig, fresh: bool = False) -> "Manifest":
        path = out_dir / MANIFEST
        digest = cfg.digest()
        if path.exists() and not fresh:
            try:
                data = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{exc.lineno}: corrupt manifest ({exc.msg})") from None
            if data.get("config_hash") != digest:
                raise ConfigError(
                    f"{path}: output directory holds results of a different config "
                    "(use --fresh to discard them or choose another directory)")
            return cls(path, data)
        data = {
            "config_hash": digest,
            "master_seed": cfg.master_seed,
            "n_trajectories": cfg.n_trajectories,
            "code_version": code_version(),
            "config_source": cfg.source,
            "created": _now(),
            "points": {},
        }
        return cls(path, data)

    def is_done(self, point: SweepPoint, out_dir: Path) -> bool:
        entry = self.data["points"].get(point.key)
        if entry is None:
            return False
        csv_path = out_dir / entry["csv"]
        return csv_path.is_file() and _digest(csv_path) == entry["sha256"]

    def record(self, point: SweepPoint, csv_path: Path, stats):
        self.data["points"][point.key] = {
            "csv": csv_path.name,
            "sha256": _digest(csv_path),
            "tau_c": point.tau_c,
            "temperature": point.temperature,
            "spatial": str(point.spatial),
            "initial_site": point.initial_site,
            "max_trace_error": stats.max_trace_error,
            "max_hermitian_error": stats.max_hermitian_error,
            "min_eigenvalue": stats.min_eigenvalue,
            "finished": _now(),
        }
        self.save()

    def save(self):
        self.data["updated"] = _now()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")


def _write_point(out_dir: Path, point: SweepPoint, stats, plots: bool) -> Path:
    csv_path = out_dir / f"{point.key}.csv"
    write_timeseries(csv_path, stats)
    if plots:
        from .plotting import plot_survival, plot_timeseries
        series = read_timeseries(csv_path)
        plot_timeseries(series, out_dir / f"{point.key}.svg", point.key)
        plot_survival(series, out_dir / f"{point.key}_survival.svg", point.key)
    return csv_path


def _point_job(cfg: RunConfig, point: SweepPoint):
    return point, run_point(cfg, point, workers=1)


def run_sweep(cfg: RunConfig, points=None, out_dir=None, workers: int | None = None,
              fresh: bool = False, plots: bool | None = None) -> dict:
    """Run every point not already finished; returns {"computed": [...], "skipped": [...]}.

    With one point the trajectories are spread over the workers; with several,
    whole points run concurrently and each is written as soon as it finishes.
    """
    out_dir = Path(out_dir) if out_dir is not None else cfg.output_dir
    points = cfg.sweep_points() if points is None else points
    plots = cfg.plots if plots is None else plots
    workers = workers or default_workers()
    manifest = Manifest.open(out_dir, cfg, fresh=fresh)
    todo = [p for p in points if not manifest.is_done(p, out_dir)]
    skipped = [p for p in points if p not in todo]
    for p in skipped:
        log.info("skipping finished point %s", p.key)
    manifest.save()

    if len(todo) == 1 or workers == 1:
        for p in todo:
            log.info("running %s", p.key)
            stats = run_point(cfg, p, workers=workers)
            manifest.record(p, _write_point(out_dir, p, stats, plots), stats)
    elif todo:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_point_job, cfg, p) for p in todo]
            for fut in as_completed(futures):
                p, stats = fut.result()
                log.info("finished %s", p.key)
                manifest.record(p, _write_point(out_dir, p, stats, plots), stats)

    if len(points) > 1:
        write_sweep_summary(cfg, points, out_dir, plots)
    return {"computed": todo, "skipped": skipped, "manifest": manifest}


def summary_rows(points, out_dir: Path) -> list[dict]:
    rows = []
    for p in points:
        s = read_timeseries(out_dir / f"{p.key}.csv")
        rows.append({
            "model": p.spatial.tag, "temperature": p.temperature,
            "initial_site": p.initial_site, "tau_c": p.tau_c, "t": s["t"][-1],
            "p_trap_mean": s["p_trap_mean"][-1], "p_trap_sd": s["p_trap_sd"][-1],
            "p_trap_se": s["p_trap_se"][-1],
        })
    return rows


def write_sweep_summary(cfg: RunConfig, points, out_dir: Path, plots: bool) -> Path:
    rows = summary_rows(points, out_dir)
    for r in rows:
        r["n_trajectories"] = cfg.n_trajectories
    path = out_dir / SUMMARY
    write_summary(path, rows)
    if plots:
        from .plotting import plot_summary
        plot_summary(rows, out_dir / "summary.svg")
    return path
