"""Run configuration: parsing, defaults and validation.

A config is a YAML document of nested sections.  JSON is accepted as well
(it is parsed with the same loader, so errors carry line numbers either way).
Every value error names the file and line of the offending key.
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .dynamics import INTEGRATORS, RateParams, check_time_step
from .model import bundled_path
from .noise import SPATIAL_MODELS

TAU_C_RANGE = (1.0, 1000.0)
TEMPERATURE_RANGE = (1.0, 1000.0)

DEFAULTS = {
    "model": {"hamiltonian": "bundled", "geometry": "bundled"},
    "rates": {"gamma_l_per_ps": RateParams.gamma_l, "gamma_t_per_ps": RateParams.gamma_t},
    "noise": {
        "reorganization_energy": 35.0,
        "temperature": 77.0,
        "tau_c": 45.0,
        "spatial": "none",
    },
    "simulation": {
        "initial_site": 1,
        "t_final": 20000.0,
        "dt": 1.0,
        "record_every": 10.0,
        "integrator": "exact",
    },
    "ensemble": {"n_trajectories": 100, "master_seed": 2024},
    "sweep": {},
    "output": {"directory": "results", "plots": True},
}

SWEEP_AXES = ("tau_c", "temperature", "spatial", "initial_site")


class ConfigError(ValueError):
    """Invalid configuration; the message carries ``file:line`` when known."""


@dataclass(frozen=True)
class SpatialSpec:
    """A spatial correlation model with its parameter.

    String form: ``none``, ``dimerized``, ``exponential:<Rc in Angstrom>``,
    ``inverse_square`` (beta from the geometry) or ``inverse_square:<beta>``.
    """

    model: str
    param: float | None = None

    @classmethod
    def parse(cls, text) -> "SpatialSpec":
        name, _, arg = str(text).strip().partition(":")
        name = name.strip()
        if name not in SPATIAL_MODELS:
            raise ValueError(f"unknown spatial model {name!r}; expected one of {SPATIAL_MODELS}")
        param = None
        if arg.strip():
            try:
                param = float(arg)
            except ValueError:
                raise ValueError(f"bad parameter {arg!r} for spatial model {name}") from None
        if name == "exponential":
            if param is None or not param > 0:
                raise ValueError("exponential model needs a positive length, e.g. exponential:10")
        elif name == "inverse_square":
            if param is not None and not 0 < param <= 1:
                raise ValueError("inverse_square beta must lie in (0, 1]")
        elif param is not None:
            raise ValueError(f"spatial model {name} takes no parameter")
        return cls(name, param)

    @property
    def tag(self) -> str:
        if self.param is None:
            return self.model
        if self.model == "exponential":
            return f"exponential_{self.param:g}A"
        return f"{self.model}_b{self.param:g}"

    def __str__(self):
        return self.model if self.param is None else f"{self.model}:{self.param:g}"


@dataclass(frozen=True)
class SweepPoint:
    tau_c: float
    temperature: float
    spatial: SpatialSpec
    initial_site: int

    @property
    def key(self) -> str:
        return (f"{self.spatial.tag}_T{self.temperature:g}K_tau{self.tau_c:g}fs"
                f"_site{self.initial_site}")


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration.  ``raw`` is the fully defaulted document."""

    raw: dict
    source: str
    hamiltonian_path: Path
    geometry_path: Path
    rates: RateParams
    reorganization_energy: float
    temperature: float
    tau_c: float
    spatial: SpatialSpec
    initial_site: int
    t_final: float
    dt: float
    record_every: float
    integrator: str
    n_trajectories: int
    master_seed: int
    sweep: dict
    output_dir: Path
    plots: bool

    def base_point(self) -> SweepPoint:
        return SweepPoint(self.tau_c, self.temperature, self.spatial, self.initial_site)

    def sweep_points(self) -> list[SweepPoint]:
        """Cartesian product of the sweep axes; axes not listed use the base value."""
        axes = {
            "tau_c": self.sweep.get("tau_c", [self.tau_c]),
            "temperature": self.sweep.get("temperature", [self.temperature]),
            "spatial": self.sweep.get("spatial", [self.spatial]),
            "initial_site": self.sweep.get("initial_site", [self.initial_site]),
        }
        return [SweepPoint(tau, temp, spatial, site)
                for spatial, temp, site, tau in itertools.product(
                    axes["spatial"], axes["temperature"], axes["initial_site"], axes["tau_c"])]

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the physics-relevant settings."""
        doc = copy.deepcopy(self.raw)
        doc.pop("output", None)
        doc["model"] = {
            "hamiltonian": _file_digest(self.hamiltonian_path),
            "geometry": _file_digest(self.geometry_path),
        }
        text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- loading ---------------------------------------------------------------

def _line_map(node):
    """Nested ``key -> (line, submap)`` for mappings and sequences (1-based lines)."""
    if isinstance(node, yaml.MappingNode):
        return {k.value: (k.start_mark.line + 1, _line_map(v)) for k, v in node.value}
    if isinstance(node, yaml.SequenceNode):
        return {i: (v.start_mark.line + 1, _line_map(v)) for i, v in enumerate(node.value)}
    return {}


class _Doc:
    """Parsed document plus key -> line lookup for messages."""

    def __init__(self, data, lines, source):
        self.data = data
        self.lines = lines
        self.source = source

    def line_of(self, *path) -> int | None:
        lines, line = self.lines, None
        for key in path:
            if not isinstance(lines, dict) or key not in lines:
                return line
            line, lines = lines[key]
        return line

    def error(self, path, message) -> ConfigError:
        line = self.line_of(*path)
        where = f"{self.source}:{line}" if line else self.source
        return ConfigError(f"{where}: {'.'.join(map(str, path))}: {message}")


def _parse_text(text: str, source: str) -> _Doc:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{source}{line}: {exc.problem}") from None
    if node is None:
        return _Doc({}, {}, source)
    lines = _line_map(node)
    if not isinstance(data, dict):
        raise ConfigError(f"{source}:1: top level must be a mapping of sections")
    return _Doc(data, lines, source)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, source=str(path), base_dir=path.parent)


def parse_config(text: str, source: str = "<config>", base_dir=None) -> RunConfig:
    doc = _parse_text(text, source)
    return _validate(doc, Path(base_dir) if base_dir is not None else Path.cwd())


def default_config() -> RunConfig:
    """Bundled defaults; relative output paths resolve against the working directory."""
    path = bundled_path("default.yaml")
    return parse_config(path.read_text(), source=str(path), base_dir=Path.cwd())


# --- validation ------------------------------------------------------------

def _merged(doc: _Doc) -> dict:
    out = copy.deepcopy(DEFAULTS)
    for section, values in doc.data.items():
        if section not in DEFAULTS:
            raise doc.error((section,), f"unknown section; expected one of {sorted(DEFAULTS)}")
        if not isinstance(values, dict):
            raise doc.error((section,), "section must be a mapping")
        allowed = SWEEP_AXES if section == "sweep" else DEFAULTS[section]
        for key, value in values.items():
            if key not in allowed:
                raise doc.error((section, key), f"unknown key; expected one of {sorted(allowed)}")
            out[section][key] = value
    return out


def _number(doc, raw, section, key, lo=None, hi=None, integer=False, positive=False):
    value = raw[section][key]
    path = (section, key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise doc.error(path, f"expected a number, got {value!r}")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise doc.error(path, f"expected an integer, got {value!r}")
        value = int(value)
    else:
        value = float(value)
    if positive and not value > 0:
        raise doc.error(path, f"must be positive, got {value:g}")
    if lo is not None and not lo <= value <= hi:
        raise doc.error(path, f"{value:g} is outside the allowed range [{lo:g}, {hi:g}]")
    return value


def _model_file(doc, raw, key, base_dir, default_name) -> Path:
    value = raw["model"][key]
    if value == "bundled":
        return bundled_path(default_name)
    if not isinstance(value, str):
        raise doc.error(("model", key), "expected a path or 'bundled'")
    path = Path(value)
    if not path.is_absolute():
        path = base_dir / path
    if not path.is_file():
        raise doc.error(("model", key), f"file not found: {path}")
    return path


def _sweep_axis(doc, values, name, check):
    path = ("sweep", name)
    if not isinstance(values, list) or not values:
        raise doc.error(path, "expected a non-empty list")
    out = []
    for i, v in enumerate(values):
        try:
            out.append(check(v))
        except (TypeError, ValueError) as exc:
            line = doc.line_of("sweep", name)
            item_lines = doc.lines.get("sweep", (None, {}))[1].get(name, (None, {}))[1]
            line = item_lines.get(i, (line,))[0]
            where = f"{doc.source}:{line}" if line else doc.source
            raise ConfigError(f"{where}: sweep.{name}[{i}]: {exc}") from None
    if len(set(map(str, out))) != len(out):
        raise doc.error(path, "duplicate values")
    return out


def _ranged(lo, hi, what):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValueError(f"expected a number, got {v!r}")
        if not lo <= v <= hi:
            raise ValueError(f"{what} {v:g} is outside the allowed range [{lo:g}, {hi:g}]")
        return float(v)
    return check


def _validate(doc: _Doc, base_dir: Path) -> RunConfig:
    raw = _merged(doc)

    h_path = _model_file(doc, raw, "hamiltonian", base_dir, "fmo_hamiltonian.txt")
    g_path = _model_file(doc, raw, "geometry", base_dir, "fmo_geometry.txt")
    # the files must parse and agree; import here to keep loader errors line-precise
    from .model import ModelFileError, load_geometry, load_site_hamiltonian
    try:
        n = load_site_hamiltonian(h_path).n_sites
        n_geom = load_geometry(g_path).n_sites
    except ModelFileError as exc:
        raise ConfigError(str(exc)) from None
    if n != n_geom:
        raise doc.error(("model", "geometry"),
                        f"geometry has {n_geom} sites but the Hamiltonian has {n}")

    rates = RateParams(
        gamma_l=_number(doc, raw, "rates", "gamma_l_per_ps", positive=True),
        gamma_t=_number(doc, raw, "rates", "gamma_t_per_ps", positive=True),
    )
    e_r = _number(doc, raw, "noise", "reorganization_energy")
    if e_r < 0:
        raise doc.error(("noise", "reorganization_energy"), "must be non-negative")
    temperature = _number(doc, raw, "noise", "temperature", *TEMPERATURE_RANGE)
    tau_c = _number(doc, raw, "noise", "tau_c", *TAU_C_RANGE)
    try:
        spatial = SpatialSpec.parse(raw["noise"]["spatial"])
    except ValueError as exc:
        raise doc.error(("noise", "spatial"), str(exc)) from None

    sim = raw["simulation"]
    initial_site = _number(doc, raw, "simulation", "initial_site", 1, n, integer=True)
    t_final = _number(doc, raw, "simulation", "t_final", positive=True)
    dt = _number(doc, raw, "simulation", "dt", positive=True)
    record_every = _number(doc, raw, "simulation", "record_every", positive=True)
    if sim["integrator"] not in INTEGRATORS:
        raise doc.error(("simulation", "integrator"), f"expected one of {INTEGRATORS}")

    n_traj = _number(doc, raw, "ensemble", "n_trajectories", integer=True)
    if n_traj < 2:
        raise doc.error(("ensemble", "n_trajectories"), "an ensemble needs at least two trajectories")
    seed = _number(doc, raw, "ensemble", "master_seed", integer=True)
    if seed < 0:
        raise doc.error(("ensemble", "master_seed"), "must be non-negative")

    sweep = {}
    checks = {
        "tau_c": _ranged(*TAU_C_RANGE, "tau_c"),
        "temperature": _ranged(*TEMPERATURE_RANGE, "temperature"),
        "spatial": SpatialSpec.parse,
        "initial_site": lambda v: int(_ranged(1, n, "initial_site")(v)),
    }
    for axis, values in raw["sweep"].items():
        sweep[axis] = _sweep_axis(doc, values, axis, checks[axis])

    # the step must resolve the shortest correlation time in play
    shortest = min(sweep.get("tau_c", [tau_c]))
    try:
        check_time_step(dt, shortest)
    except ValueError as exc:
        raise doc.error(("simulation", "dt"), str(exc)) from None
    for num, den, what, keys in ((t_final, dt, "t_final / dt", ("dt", "t_final")),
                                 (record_every, dt, "record_every / dt", ("dt", "record_every")),
                                 (t_final, record_every, "t_final / record_every",
                                  ("record_every", "t_final"))):
        ratio = num / den
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            # point at whichever of the two keys the file actually sets
            key = next((k for k in keys if k in doc.data.get("simulation", {})), keys[0])
            raise doc.error(("simulation", key), f"{what} must be a whole number")

    out = raw["output"]
    if not isinstance(out["plots"], bool):
        raise doc.error(("output", "plots"), "expected true or false")
    out_dir = Path(str(out["directory"]))
    if not out_dir.is_absolute():
        out_dir = base_dir / out_dir

    return RunConfig(
        raw=raw, source=doc.source, hamiltonian_path=h_path, geometry_path=g_path,
        rates=rates, reorganization_energy=e_r, temperature=temperature, tau_c=tau_c,
        spatial=spatial, initial_site=initial_site, t_final=t_final, dt=dt,
        record_every=record_every, integrator=sim["integrator"], n_trajectories=n_traj,
        master_seed=seed, sweep=sweep, output_dir=out_dir, plots=out["plots"],
    )
