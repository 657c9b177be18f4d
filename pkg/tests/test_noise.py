import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sle_transport import model, noise
from sle_transport.noise import NoiseConfig, NotPositiveDefiniteError

from conftest import line_geometry

N_SAMPLES = 100_000


def test_sigma_values():
    assert NoiseConfig(45, 35, 300).sigma == pytest.approx(120.8, abs=0.05)
    assert NoiseConfig(45, 35, 77).sigma == pytest.approx(61.2, abs=0.05)
    assert NoiseConfig(45, 35, 300).sigma == math.sqrt(2 * 35 * 0.69504 * 300)
    assert NoiseConfig(45, 0, 300).sigma == 0


@pytest.mark.parametrize("kwargs", [dict(tau_c=0, e_r=35, temperature=77),
                                    dict(tau_c=45, e_r=-1, temperature=77),
                                    dict(tau_c=45, e_r=35, temperature=0)])
def test_noise_config_validation(kwargs):
    with pytest.raises(ValueError):
        NoiseConfig(**kwargs)


def test_none_model(fmo_geom):
    c = noise.build_correlation_matrix("none", fmo_geom)
    np.testing.assert_array_equal(c.matrix, np.eye(7))
    np.testing.assert_array_equal(c.cholesky_factor, np.eye(7))
    assert c.model_tag == "none"


def test_dimerized_nominal_entries():
    c = noise.dimerized_matrix(7)
    expected = np.eye(7)
    for (i, j), v in {(1, 2): 0.9, (5, 6): 0.9, (4, 5): 0.4, (4, 7): 0.4}.items():
        expected[i - 1, j - 1] = expected[j - 1, i - 1] = v
    np.testing.assert_array_equal(c, expected)


def test_dimerized_nominal_is_indefinite():
    # the nominal constants violate positive definiteness by a hair
    lowest = np.linalg.eigvalsh(noise.dimerized_matrix(7))[0]
    assert -3e-4 < lowest < 0
    with pytest.raises(NotPositiveDefiniteError):
        noise.cholesky(noise.dimerized_matrix(7))


def test_dimerized_built_matrix(fmo_geom):
    c = noise.build_correlation_matrix("dimerized", fmo_geom)
    nominal = noise.dimerized_matrix(7)
    assert 0.9996 < c.shrinkage < 1
    assert np.max(np.abs(c.matrix - nominal)) < 4e-4
    np.testing.assert_array_equal(c.matrix == 0, nominal == 0)
    np.testing.assert_array_equal(np.diag(c.matrix), 1.0)
    assert np.linalg.eigvalsh(c.matrix)[0] == pytest.approx(noise.SHRINK_MIN_EIG, rel=1e-6)
    np.testing.assert_allclose(c.cholesky_factor @ c.cholesky_factor.T, c.matrix, atol=1e-10)


def test_dimerized_needs_seven_sites():
    with pytest.raises(ValueError, match="at least"):
        noise.build_correlation_matrix("dimerized", line_geometry([0, 10, 20]))


def test_exponential_two_sites():
    c = noise.build_correlation_matrix("exponential", line_geometry([0, 10]), rc_angstrom=10)
    assert c.matrix[0, 1] == pytest.approx(math.exp(-1))
    assert c.model_tag == "exponential_10A"
    with pytest.raises(ValueError):
        noise.build_correlation_matrix("exponential", line_geometry([0, 10]))


def test_inverse_square_uses_nm(fmo_geom):
    c = noise.inverse_power_matrix(fmo_geom, 1.0, 2.0)
    d_nm = fmo_geom.distances[0, 1] / 10
    assert c[0, 1] == pytest.approx(1 / d_nm**2)


def test_find_max_beta_two_sites():
    # [[1, b], [1, b]] at d = 1 nm is PD for every b < 1: the answer is 1 to the bisection tolerance
    assert noise.find_max_beta(line_geometry([0, 10])) == pytest.approx(1.0, abs=1e-4)
    # farther apart, b = 1 is already PD and the cap applies exactly
    assert noise.find_max_beta(line_geometry([0, 15])) == 1.0


def test_find_max_beta_triangle():
    # side s gives off-diagonal b / s^2; shrink the sides to make the bound active
    s = 0.5  # nm
    coords = 10 * s * np.array([[0, 0, 0], [1, 0, 0], [0.5, math.sqrt(3) / 2, 0]])
    g = model.Geometry(coords)
    # off-diagonal x = b / s^2 = 4b; eigenvalues 1 + 2x, 1 - x; PD iff x < 1 iff b < 0.25
    beta = noise.find_max_beta(g)
    assert 0.25 - 2e-4 <= beta < 0.25


def test_find_max_beta_three_equidistant_sites_at_1nm():
    coords = 10 * np.array([[0, 0, 0], [1, 0, 0], [0.5, math.sqrt(3) / 2, 0]])
    # off-diagonals beta; eigenvalues 1 + 2 beta, 1 - beta, 1 - beta: PD iff beta < 1
    assert noise.find_max_beta(model.Geometry(coords)) == pytest.approx(1.0, abs=1e-4)


def test_find_max_beta_close_sites_active():
    # four sites on a tight square: bound must be active and bisection exact to 1e-4
    coords = 10 * 0.6 * np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]])
    g = model.Geometry(coords)
    beta = noise.find_max_beta(g)
    assert beta < 1
    assert np.linalg.eigvalsh(noise.inverse_power_matrix(g, beta))[0] > 1e-9
    assert np.linalg.eigvalsh(noise.inverse_power_matrix(g, beta + 2e-4))[0] <= 1e-9


def test_inverse_square_model(fmo_geom):
    c = noise.build_correlation_matrix("inverse_square", fmo_geom)
    assert c.model_tag.startswith("inverse_square_b")
    c2 = noise.build_correlation_matrix("inverse_square", fmo_geom, beta=0.5)
    assert c2.model_tag == "inverse_square_b0.5000"


def test_unknown_model(fmo_geom):
    with pytest.raises(ValueError, match="unknown spatial model"):
        noise.build_correlation_matrix("gaussian", fmo_geom)


def test_cholesky_examples():
    np.testing.assert_array_equal(noise.cholesky(np.eye(4)), np.eye(4))
    L = noise.cholesky([[1, 0.9], [0.9, 1]])
    np.testing.assert_allclose(L, [[1, 0], [0.9, math.sqrt(0.19)]], atol=1e-15)
    with pytest.raises(NotPositiveDefiniteError):
        noise.cholesky([[1, 1.1], [1.1, 1]])
    with pytest.raises(ValueError, match="symmetric"):
        noise.cholesky([[1, 0.2], [0.1, 1]])


def test_all_ones_rejected_near_ones_accepted():
    n = 7
    with pytest.raises(NotPositiveDefiniteError):
        noise.correlation_from_matrix(np.ones((n, n)))
    eps = 1e-6
    c = noise.correlation_from_matrix((1 - eps) * np.ones((n, n)) + eps * np.eye(n), "near_ones")
    field = noise.sample_field(NoiseConfig(45, 35, 300), c, 200, 1.0, seed=3)
    spread = field.delta.max(axis=1) - field.delta.min(axis=1)
    assert np.max(spread) < 1e-2 * np.max(np.abs(field.delta))


def test_correlation_from_matrix_checks():
    with pytest.raises(ValueError, match="diagonal"):
        noise.correlation_from_matrix([[2, 0], [0, 1]])
    with pytest.raises(ValueError, match="negative"):
        noise.correlation_from_matrix([[1, -0.2], [-0.2, 1]])


def test_ou_step_limits():
    rng = np.random.default_rng(0)
    u = rng.standard_normal(5)
    # a -> 0: fresh standard normals, identical to the generator's next draw
    fresh = noise.ou_step(u, 1e6, 1.0, np.random.default_rng(9))
    np.testing.assert_allclose(fresh, np.random.default_rng(9).standard_normal(5), atol=1e-12)
    # a -> 1: frozen
    np.testing.assert_allclose(noise.ou_step(u, 1e-12, 1e3, rng), u, atol=1e-6)


def _stationary_pairs(tau_c, lags, corr, rng, n=N_SAMPLES):
    """Delta at time 0 and at each lag (in steps of 1 fs) for n independent chains."""
    sigma = NoiseConfig(tau_c, 35, 300).sigma
    u = rng.standard_normal((n, corr.n_sites))
    L = corr.cholesky_factor
    out = {0: sigma * u @ L.T}
    for k in range(1, max(lags) + 1):
        u = noise.ou_step(u, 1.0, tau_c, rng)
        if k in lags:
            out[k] = sigma * u @ L.T
    return sigma, out


def test_noise_statistics(fmo_geom):
    tau = 45
    corr = noise.build_correlation_matrix("exponential", fmo_geom, rc_angstrom=20)
    sigma, d = _stationary_pairs(tau, {tau, 2 * tau}, corr, np.random.default_rng(11))
    x0 = d[0]
    var = x0.var(axis=0)
    np.testing.assert_allclose(var, sigma**2, rtol=0.03)
    cross = (x0.T @ x0) / len(x0) / sigma**2
    np.testing.assert_allclose(cross, corr.matrix, atol=0.03)
    for lag, target in ((tau, math.exp(-1)), (2 * tau, math.exp(-2))):
        ac = np.mean(x0 * d[lag], axis=0) / sigma**2
        np.testing.assert_allclose(ac, target, atol=0.02)


def test_sample_field_contract(fmo_geom):
    cfg = NoiseConfig(30, 35, 77)
    corr = noise.build_correlation_matrix("exponential", fmo_geom, rc_angstrom=10)
    f = noise.sample_field(cfg, corr, 50, 0.5, seed=5)
    np.testing.assert_allclose(f.delta, cfg.sigma * f.u @ corr.cholesky_factor.T, rtol=1e-13, atol=1e-10)
    np.testing.assert_array_equal(f.times, 0.5 * np.arange(51))
    g = noise.sample_field(cfg, corr, 50, 0.5, seed=5)
    assert np.array_equal(f.delta, g.delta)


def test_different_seeds_uncorrelated():
    corr = noise.build_correlation_matrix("none", line_geometry([0, 10]))
    cfg = NoiseConfig(5, 35, 77)
    a = noise.sample_field(cfg, corr, 20000, 1.0, seed=1).delta[:, 0]
    b = noise.sample_field(cfg, corr, 20000, 1.0, seed=2).delta[:, 0]
    r = np.corrcoef(a, b)[0, 1]
    # effective sample size ~ 20000 / (2 tau_c) = 2000, so |r| ~ 0.02
    assert abs(r) < 0.1


def test_batch_independence(fmo_geom):
    cfg = NoiseConfig(45, 35, 300)
    corr = noise.build_correlation_matrix("exponential", fmo_geom, rc_angstrom=10)
    batch = noise.OUNoise(cfg, corr, 1.0, [noise.trajectory_rng(7, k) for k in range(5)])
    alone = noise.OUNoise(cfg, corr, 1.0, [noise.trajectory_rng(7, 3)])
    assert np.array_equal(batch.current()[3], alone.current()[0])
    for _ in range(600):  # crosses a buffer boundary
        a, b = batch.advance()[3], alone.advance()[0]
    assert np.array_equal(a, b)


def test_refine_ou_path_statistics():
    rng = np.random.default_rng(4)
    tau, dt = 20.0, 1.0
    m = N_SAMPLES
    u0 = rng.standard_normal((m, 1))
    u2 = noise.ou_step(u0, 2 * dt, tau, rng)
    path = np.stack([u0, u2], axis=0)[:, :, 0]  # (2, m): treat chains as sites
    fine = noise.refine_ou_path(path, dt, tau, rng)
    assert fine.shape == (3, m)
    np.testing.assert_array_equal(fine[0], u0[:, 0])
    np.testing.assert_array_equal(fine[2], u2[:, 0])
    mid = fine[1]
    a = math.exp(-dt / tau)
    assert mid.var() == pytest.approx(1.0, rel=0.03)
    assert np.mean(mid * fine[0]) == pytest.approx(a, abs=0.01)
    assert np.mean(mid * fine[2]) == pytest.approx(a, abs=0.01)


def test_replay_noise_exhaustion():
    r = noise.ReplayNoise(np.zeros((3, 2)))
    r.advance()
    r.advance()
    with pytest.raises(IndexError):
        r.advance()


coords = st.integers(2, 7).flatmap(
    lambda n: arrays(np.float64, (n, 3), elements=st.floats(-30, 30), unique=True))


@given(coords, st.floats(1, 40))
def test_exponential_model_properties(xyz, rc):
    d = np.linalg.norm(xyz[:, None] - xyz[None], axis=-1)
    if np.any(d[~np.eye(len(xyz), dtype=bool)] < 1.0):
        return
    c = noise.build_correlation_matrix("exponential", model.Geometry(xyz), rc_angstrom=rc)
    m = c.matrix
    np.testing.assert_array_equal(np.diag(m), 1.0)
    assert np.all(m >= 0) and np.all(m <= 1)
    np.testing.assert_allclose(c.cholesky_factor @ c.cholesky_factor.T, m, atol=1e-10)
    assert np.allclose(np.triu(c.cholesky_factor, 1), 0)


@given(st.integers(2, 6).flatmap(
    lambda n: arrays(np.float64, (n, n), elements=st.floats(0, 1))))
def test_shrink_properties(a):
    c = 0.5 * (a + a.T)
    np.fill_diagonal(c, 1.0)
    out, factor = noise.shrink_to_positive_definite(c)
    assert 0 < factor <= 1
    np.testing.assert_array_equal(out == 0, c == 0)
    np.testing.assert_array_equal(np.diag(out), 1.0)
    assert np.linalg.eigvalsh(out)[0] >= noise.SHRINK_MIN_EIG - 1e-10
    if factor == 1:
        np.testing.assert_array_equal(out, c)
