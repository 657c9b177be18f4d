"""Command line interface: ``sle-transport {run,sweep,rates,plot,validate}``.

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure.
The worker cap defaults to the SLE_TRANSPORT_WORKERS environment variable.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, default_config, load_config
from .dynamics import TrajectoryError
from .ensemble import WORKERS_ENV
from .io import CSVFormatError, write_rates
from .model import ModelFileError, diagonalize, load_site_hamiltonian
from .noise import NotPositiveDefiniteError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


def _config(args):
    return load_config(args.config) if args.config else default_config()


def cmd_validate(args):
    cfg = _config(args)
    n_points = len(cfg.sweep_points())
    print(f"{cfg.source}: ok ({n_points} sweep point{'s' if n_points != 1 else ''}, "
          f"{cfg.n_trajectories} trajectories each)")
    return EXIT_OK


def _run(args, sweep: bool):
    from .runner import run_sweep

    cfg = _config(args)
    points = cfg.sweep_points() if sweep else [cfg.base_point()]
    plots = False if args.no_plots else None
    result = run_sweep(cfg, points, out_dir=args.output, workers=args.workers,
                       fresh=args.fresh, plots=plots)
    out_dir = result["manifest"].path.parent
    print(f"{len(result['computed'])} computed, {len(result['skipped'])} already done; "
          f"results in {out_dir}")
    return EXIT_OK


def cmd_run(args):
    return _run(args, sweep=False)


def cmd_sweep(args):
    return _run(args, sweep=True)


def cmd_rates(args):
    from . import rates
    from .noise import NoiseConfig

    cfg = _config(args)
    tau_c = args.tau_c if args.tau_c is not None else cfg.tau_c
    temperature = args.temperature if args.temperature is not None else cfg.temperature
    sigma = NoiseConfig(tau_c=tau_c, e_r=cfg.reorganization_energy, temperature=temperature).sigma
    basis = diagonalize(load_site_hamiltonian(cfg.hamiltonian_path))
    table = rates.rate_table(basis, sigma, tau_c)
    opt = rates.optimal_tau_c(basis, band=tuple(args.band))
    rows = []
    for a in range(basis.n):
        for b in range(basis.n):
            rows.append({
                "alpha": a, "beta": b, "energy_gap": basis.gaps()[a, b],
                "omega": table.omega[a, b], "tau_c_opt": opt.per_pair[a, b],
                "gamma_inf": table.gamma_inf[a, b],
            })
    write_rates(args.output or sys.stdout, rows)
    lo, hi = opt.tau_range
    band_lo, band_hi = rates.band_tau_range(tuple(args.band))
    # keep stdout a clean CSV when the table goes there
    print(f"optimal tau_c over {opt.n_pairs_in_band} exciton pairs with gaps in "
          f"[{args.band[0]:g}, {args.band[1]:g}] cm^-1: {lo:.1f} - {hi:.1f} fs "
          f"(band limits {band_lo:.1f} - {band_hi:.1f} fs)",
          file=sys.stdout if args.output else sys.stderr)
    return EXIT_OK


def cmd_plot(args):
    from .plotting import plot_csv

    path = plot_csv(args.csv, args.output, kind=args.kind)
    print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sle-transport",
        description="Excitation transport under correlated classical noise.",
        epilog=f"The worker cap defaults to ${WORKERS_ENV} (1 if unset).")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p, required=False):
        p.add_argument("config", nargs=None if required else "?",
                       help="YAML or JSON config (default: bundled FMO settings)")

    p = sub.add_parser("validate", help="check a config without running anything")
    add_config(p)
    p.set_defaults(func=cmd_validate)

    for name, func, text in (("run", cmd_run, "run the base point of a config"),
                             ("sweep", cmd_sweep, "run every point of the config's sweep")):
        p = sub.add_parser(name, help=text)
        add_config(p)
        p.add_argument("-o", "--output", type=Path, help="output directory (overrides config)")
        p.add_argument("-j", "--workers", type=int, help="worker processes")
        p.add_argument("--fresh", action="store_true", help="discard an existing manifest")
        p.add_argument("--no-plots", action="store_true", help="skip SVG output")
        p.set_defaults(func=func)

    p = sub.add_parser("rates", help="exciton rate table and optimal tau_c range")
    add_config(p)
    p.add_argument("--tau-c", type=float, help="correlation time in fs")
    p.add_argument("--temperature", type=float, help="temperature in K")
    p.add_argument("--band", type=float, nargs=2, default=[90.0, 350.0],
                   metavar=("LOW", "HIGH"), help="energy-gap band in cm^-1")
    p.add_argument("-o", "--output", type=Path, help="CSV file (default: stdout)")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("plot", help="render a CSV from run/sweep as SVG")
    p.add_argument("csv", type=Path)
    p.add_argument("-o", "--output", type=Path, help="SVG path")
    p.add_argument("--kind", choices=("auto", "summary", "timeseries", "survival"),
                   default="auto")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (TrajectoryError, NotPositiveDefiniteError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ModelFileError, CSVFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # remaining value errors come from bad command-line values
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
