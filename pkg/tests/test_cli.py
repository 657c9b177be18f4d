import json
from pathlib import Path

import numpy as np
import pytest

from sle_transport import cli, config, io, plotting
from sle_transport.config import ConfigError, SpatialSpec, load_config, parse_config

from conftest import write_text

SMOKE = """\
noise:
  tau_c: 45
  temperature: 77
simulation:
  t_final: 100
  record_every: 10
ensemble:
  n_trajectories: 2
output:
  plots: false
"""

SWEEP = SMOKE + """\
sweep:
  tau_c: [30, 45]
  spatial: [none, "exponential:10"]
"""


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


# --- config ---------------------------------------------------------------

def test_defaults_and_bundled_config():
    cfg = config.default_config()
    assert cfg.tau_c == 45 and cfg.temperature == 77 and cfg.n_trajectories == 100
    assert cfg.master_seed == 2024 and cfg.t_final == 20000
    assert len(cfg.sweep_points()) == 8 * 5
    assert cfg.output_dir == Path.cwd() / "results"


def test_spatial_spec_parsing():
    assert SpatialSpec.parse("exponential:10").tag == "exponential_10A"
    assert SpatialSpec.parse("none").param is None
    assert SpatialSpec.parse("inverse_square:0.5").param == 0.5
    for bad in ("exponential", "gaussian", "exponential:-3", "none:4"):
        with pytest.raises(ValueError):
            SpatialSpec.parse(bad)


def test_sweep_points_product(tmp_path):
    cfg = load_config(write_text(tmp_path, "c.yaml", SWEEP))
    keys = [p.key for p in cfg.sweep_points()]
    assert keys == ["none_T77K_tau30fs_site1", "none_T77K_tau45fs_site1",
                    "exponential_10A_T77K_tau30fs_site1", "exponential_10A_T77K_tau45fs_site1"]


def test_dt_equal_to_tau_rejected_with_line(tmp_path):
    text = "noise:\n  tau_c: 5\nsimulation:\n  dt: 5\n"
    path = write_text(tmp_path, "c.yaml", text)
    with pytest.raises(ConfigError, match=r"c\.yaml:4: simulation\.dt"):
        load_config(path)


def test_dt_checked_against_shortest_swept_tau(tmp_path):
    text = "simulation:\n  dt: 1\nsweep:\n  tau_c: [5, 45]\n"
    with pytest.raises(ConfigError, match=r":2: simulation\.dt"):
        load_config(write_text(tmp_path, "c.yaml", text))


@pytest.mark.parametrize("text, where", [
    ("noise:\n  tau_c: 2000\n", ":2: noise.tau_c"),
    ("noise:\n  temperature: 0\n", ":2: noise.temperature"),
    ("noise:\n  spatial: gaussian\n", ":2: noise.spatial"),
    ("simulation:\n  initial_site: 8\n", ":2: simulation.initial_site"),
    ("simulation:\n  t_final: 100.5\n", ":2: simulation.t_final"),
    ("ensemble:\n  n_trajectories: 1\n", ":2: ensemble.n_trajectories"),
    ("noise:\n  tau_cc: 4\n", ":2: noise.tau_cc"),
    ("extras: {}\n", ":1: extras"),
    ("sweep:\n  tau_c:\n    - 30\n    - 0.5\n", ":4: sweep.tau_c[1]"),
    ("model:\n  hamiltonian: missing.txt\n", ":2: model.hamiltonian"),
    ("noise: [1, 2\n", "c.yaml:"),
])
def test_invalid_configs(tmp_path, text, where):
    with pytest.raises(ConfigError) as info:
        load_config(write_text(tmp_path, "c.yaml", text))
    assert where in str(info.value)


def test_json_config_has_lines(tmp_path):
    text = '{\n  "noise": {\n    "tau_c": -1\n  }\n}\n'
    with pytest.raises(ConfigError, match=r"c\.json:3: noise\.tau_c"):
        load_config(write_text(tmp_path, "c.json", text))
    ok = load_config(write_text(tmp_path, "d.json", json.dumps({"noise": {"tau_c": 60}})))
    assert ok.tau_c == 60


def test_site_count_mismatch(tmp_path):
    write_text(tmp_path, "g.txt", "1 0 0 0\n2 10 0 0\n")
    with pytest.raises(ConfigError, match="geometry has 2 sites"):
        load_config(write_text(tmp_path, "c.yaml", "model:\n  geometry: g.txt\n"))


def test_digest_ignores_output_only(tmp_path):
    a = parse_config(SMOKE)
    b = parse_config(SMOKE.replace("plots: false", "plots: true"))
    c = parse_config(SMOKE.replace("tau_c: 45", "tau_c: 46"))
    assert a.digest() == b.digest() != c.digest()


# --- CLI ------------------------------------------------------------------

def test_validate(tmp_path, capsys):
    code, out, _ = run(["validate", write_text(tmp_path, "c.yaml", SWEEP)], capsys)
    assert code == 0 and "4 sweep points" in out
    code, _, err = run(["validate", write_text(tmp_path, "bad.yaml", "noise:\n  tau_c: 5\n"
                                                "simulation:\n  dt: 5\n")], capsys)
    assert code == 1 and "bad.yaml:4" in err


def test_run_writes_well_formed_csv(tmp_path, capsys):
    cfg = write_text(tmp_path, "c.yaml", SMOKE)
    code, out, _ = run(["run", cfg, "-o", tmp_path / "out"], capsys)
    assert code == 0 and "1 computed" in out
    csv_path = tmp_path / "out" / "none_T77K_tau45fs_site1.csv"
    header, body = io.read_csv(csv_path)
    assert header == io.timeseries_header(7)
    assert len(body) == 11
    series = io.read_timeseries(csv_path)
    np.testing.assert_allclose(series["p_trap_mean"] + series["p_surv_mean"], 1, atol=1e-12)
    np.testing.assert_allclose(series["t"], np.arange(0, 101, 10))
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["master_seed"] == 2024 and manifest["n_trajectories"] == 2
    entry = manifest["points"]["none_T77K_tau45fs_site1"]
    assert entry["max_trace_error"] < 1e-8 and entry["min_eigenvalue"] > -1e-8


def test_sweep_resume_and_fresh(tmp_path, capsys):
    cfg = write_text(tmp_path, "c.yaml", SWEEP.replace("plots: false", "plots: true"))
    out_dir = tmp_path / "out"
    code, out, _ = run(["sweep", cfg, "-o", out_dir, "-j", "2"], capsys)
    assert code == 0 and "4 computed" in out
    first = json.loads((out_dir / "manifest.json").read_text())["points"]
    csv_bytes = {p.name: p.read_bytes() for p in out_dir.glob("*.csv")}
    assert "summary.csv" in csv_bytes and (out_dir / "summary.svg").exists()
    rows = io.read_summary(out_dir / "summary.csv")
    assert {r["model"] for r in rows} == {"none", "exponential_10A"}

    code, out, _ = run(["sweep", cfg, "-o", out_dir], capsys)
    assert code == 0 and "0 computed, 4 already done" in out
    again = json.loads((out_dir / "manifest.json").read_text())["points"]
    assert again == first

    # a partly finished sweep only computes what is missing
    (out_dir / "none_T77K_tau30fs_site1.csv").unlink()
    code, out, _ = run(["sweep", cfg, "-o", out_dir], capsys)
    assert "1 computed, 3 already done" in out
    assert (out_dir / "none_T77K_tau30fs_site1.csv").read_bytes() == \
        csv_bytes["none_T77K_tau30fs_site1.csv"]

    other = write_text(tmp_path, "d.yaml", SWEEP.replace("tau_c: 45", "tau_c: 60"))
    code, _, err = run(["sweep", other, "-o", out_dir], capsys)
    assert code == 1 and "different config" in err
    code, out, _ = run(["sweep", other, "-o", out_dir, "--fresh", "--no-plots"], capsys)
    assert code == 0 and "4 computed" in out


def test_rates_subcommand(tmp_path, capsys):
    code, out, err = run(["rates", "--tau-c", "30"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0].split(",") == io.RATES_HEAD and len(lines) == 1 + 49
    assert "15.2 - 59.0 fs" in err
    target = tmp_path / "r.csv"
    code, out, _ = run(["rates", "-o", target, "--band", "100", "200"], capsys)
    assert code == 0 and "band limits 26.5 - 53.1 fs" in out
    assert io.csv_kind(target) == "rates"


def test_plot_subcommand_deterministic(tmp_path, capsys):
    cfg = write_text(tmp_path, "c.yaml", SMOKE)
    run(["run", cfg, "-o", tmp_path / "out"], capsys)
    csv_path = tmp_path / "out" / "none_T77K_tau45fs_site1.csv"
    svgs = []
    for name in ("a.svg", "b.svg"):
        code, out, _ = run(["plot", csv_path, "-o", tmp_path / name], capsys)
        assert code == 0
        svgs.append((tmp_path / name).read_bytes())
    assert svgs[0] == svgs[1] and svgs[0].startswith(b"<?xml")
    code, _, _ = run(["plot", csv_path, "--kind", "survival", "-o", tmp_path / "s.svg"], capsys)
    assert code == 0 and b"<svg" in (tmp_path / "s.svg").read_bytes()


def test_plot_rejects_bad_csv(tmp_path, capsys):
    empty = write_text(tmp_path, "e.csv", "")
    ragged = write_text(tmp_path, "r.csv", ",".join(io.SUMMARY_HEAD) + "\nnone,77\n")
    unknown = write_text(tmp_path, "u.csv", "a,b\n1,2\n")
    for path in (empty, ragged, unknown, tmp_path / "missing.csv"):
        code, _, err = run(["plot", path], capsys)
        assert code == 1, path
        assert err.startswith("error:")


def test_numerical_failure_exit_code(tmp_path, capsys):
    # noisy ABM at the largest allowed step loses positivity
    text = SMOKE.replace("t_final: 100", "t_final: 400").replace(
        "record_every: 10", "record_every: 4\n  dt: 2\n  integrator: abm") \
        .replace("temperature: 77", "temperature: 300").replace("tau_c: 45", "tau_c: 20")
    code, _, err = run(["run", write_text(tmp_path, "c.yaml", text), "-o", tmp_path / "o"], capsys)
    assert code == 2 and "numerical failure" in err


# --- plotting -------------------------------------------------------------

def summary_rows(models):
    rows = []
    for i, m in enumerate(models):
        for tau in (5, 15, 30, 45, 60, 90):
            rows.append({"model": m, "temperature": 77.0, "initial_site": 1, "tau_c": tau,
                         "t": 20000.0, "p_trap_mean": 0.8 - 0.01 * i - 1e-5 * (tau - 45) ** 2,
                         "p_trap_sd": 0.05, "p_trap_se": 0.005, "n_trajectories": 100})
    return rows


@pytest.mark.parametrize("models", [["none"], ["none", "dimerized", "exponential_5A",
                                                "exponential_10A", "exponential_20A"]])
def test_summary_plot_has_one_series_per_model(tmp_path, models):
    assert _legend_labels(summary_rows(models)) == models
    path = plotting.plot_summary(summary_rows(models), tmp_path / "s.svg")
    assert path.read_bytes().startswith(b"<?xml")


def _legend_labels(rows):
    import matplotlib.pyplot as plt
    orig = plotting._save
    captured = {}

    def grab(fig, path):
        captured["labels"] = [t.get_text() for t in fig.axes[0].get_legend().get_texts()]
        plt.close(fig)

    plotting._save = grab
    try:
        plotting.plot_summary(rows, "unused.svg")
    finally:
        plotting._save = orig
    return captured["labels"]


def test_summary_round_trip_and_plot_bytes(tmp_path):
    rows = summary_rows(["none", "dimerized"])
    io.write_summary(tmp_path / "s.csv", rows)
    back = io.read_summary(tmp_path / "s.csv")
    assert back[3]["p_trap_mean"] == rows[3]["p_trap_mean"]
    a = plotting.plot_csv(tmp_path / "s.csv", tmp_path / "a.svg").read_bytes()
    b = plotting.plot_csv(tmp_path / "s.csv", tmp_path / "b.svg").read_bytes()
    assert a == b


def test_cubic_trend():
    x = np.array([5, 15, 30, 45, 60, 90.0])
    y = 1 + 0.1 * x - 0.002 * x**2 + 1e-5 * x**3
    xs, ys = plotting.cubic_trend(x, y)
    np.testing.assert_allclose(ys, 1 + 0.1 * xs - 0.002 * xs**2 + 1e-5 * xs**3, atol=1e-9)
    assert plotting.cubic_trend([1, 2, 3], [1, 2, 3]) is None
