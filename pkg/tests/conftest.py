import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sle_transport import model

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def fmo_h():
    return model.fmo_hamiltonian()


@pytest.fixture(scope="session")
def fmo_geom():
    return model.fmo_geometry()


def write_text(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def line_geometry(positions):
    """Sites on the x axis at the given positions (Angstrom)."""
    coords = np.zeros((len(positions), 3))
    coords[:, 0] = positions
    return model.Geometry(coords, tuple(f"s{i + 1}" for i in range(len(positions))))


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, with the numbers the test recorded."""
    rows = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" or "test_acceptance.py::test_criterion" not in rep.nodeid:
                continue
            detail = dict(rep.user_properties).get("detail", "")
            rows.append((rep.nodeid.split("::")[-1], outcome.upper()[:4], detail))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in sorted(rows, key=lambda r: int(r[0].split("_")[2])):
        terminalreporter.write_line(f"{status}  {name}")
        for line in detail.splitlines():
            terminalreporter.write_line(f"      {line}")
