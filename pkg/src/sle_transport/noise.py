"""Gaussian site-energy fluctuations with exponential temporal correlation and
a fixed spatial correlation matrix.

Each site carries an independent unit-variance Ornstein-Uhlenbeck process
``u_j(t)``, advanced with the exact stationary update

    u(t + dt) = a u(t) + sqrt(1 - a^2) xi,    a = exp(-dt / tau_c),

and the physical field is ``Delta(t) = Delta0 * L @ u(t)`` with ``L`` the lower
Cholesky factor of the spatial correlation matrix ``C``.  The result is
zero-mean Gaussian with ``<Delta_i(t) Delta_j(t + s)> = Delta0^2 C_ij exp(-|s|/tau_c)``
for any step ``dt``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import KB_CM_PER_K
from .model import Geometry

SPATIAL_MODELS = ("none", "dimerized", "exponential", "inverse_square")

# 1-based site pairs of the dimerized model and their correlation
DIMER_PAIRS = {(1, 2): 0.9, (5, 6): 0.9, (4, 5): 0.4, (4, 7): 0.4}

PIVOT_TOL = 1e-12

# floor on the smallest eigenvalue after shrinking an indefinite model matrix
SHRINK_MIN_EIG = 1e-4


class NotPositiveDefiniteError(ValueError):
    """The requested spatial correlation matrix has no Cholesky factor."""


@dataclass(frozen=True)
class NoiseConfig:
    """Correlation time ``tau_c`` (fs), reorganization energy ``e_r`` (cm^-1)
    and temperature (K)."""

    tau_c: float
    e_r: float
    temperature: float

    def __post_init__(self):
        if not self.tau_c > 0:
            raise ValueError(f"tau_c must be positive, got {self.tau_c}")
        if not self.e_r >= 0:
            raise ValueError(f"e_r must be non-negative, got {self.e_r}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @property
    def sigma(self) -> float:
        """Fluctuation amplitude Delta0 = sqrt(2 E_R k_B T), cm^-1."""
        return math.sqrt(2.0 * self.e_r * KB_CM_PER_K * self.temperature)


@dataclass(frozen=True)
class CorrelationMatrix:
    """Spatial correlation matrix with its Cholesky factor.

    ``shrinkage`` < 1 records that the off-diagonals of the model matrix were
    scaled by that factor to make it positive definite.
    """

    matrix: np.ndarray
    cholesky_factor: np.ndarray
    model_tag: str
    shrinkage: float = 1.0

    @property
    def n_sites(self) -> int:
        return self.matrix.shape[0]


def cholesky(c, pivot_tol: float = PIVOT_TOL) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == c``.

    Raises NotPositiveDefiniteError when a pivot drops to ``pivot_tol`` or below.
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {c.shape}")
    if not np.allclose(c, c.T, rtol=0.0, atol=1e-12):
        raise ValueError("matrix is not symmetric")
    n = c.shape[0]
    L = np.zeros_like(c)
    for j in range(n):
        pivot = c[j, j] - np.dot(L[j, :j], L[j, :j])
        if pivot <= pivot_tol:
            raise NotPositiveDefiniteError(
                f"matrix is not positive definite (pivot {j + 1} = {pivot:.3g})"
            )
        L[j, j] = math.sqrt(pivot)
        for i in range(j + 1, n):
            L[i, j] = (c[i, j] - np.dot(L[i, :j], L[j, :j])) / L[j, j]
    return L


def _with_unit_diagonal(off: np.ndarray) -> np.ndarray:
    c = off.copy()
    np.fill_diagonal(c, 1.0)
    return c


def inverse_power_matrix(geometry: Geometry, beta: float, power: float = 2.0) -> np.ndarray:
    """Unit-diagonal matrix with off-diagonals ``beta / d_ij**power``, d in nm."""
    d_nm = geometry.distances / 10.0
    with np.errstate(divide="ignore"):
        off = beta / d_nm**power
    return _with_unit_diagonal(off)


def _min_eig(c: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(c)[0])


def find_max_beta(
    geometry: Geometry, power: float = 2.0, tol: float = 1e-4, eig_floor: float = 1e-9
) -> float:
    """Largest ``beta`` in (0, 1] keeping ``beta / d**power`` positive definite.

    Distances enter in nm.  Bisection stops once the bracket is narrower than
    ``tol``; the lower (feasible) end is returned.
    """
    if not power > 0:
        raise ValueError("power must be positive")
    if _min_eig(inverse_power_matrix(geometry, 1.0, power)) > eig_floor:
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _min_eig(inverse_power_matrix(geometry, mid, power)) > eig_floor:
            lo = mid
        else:
            hi = mid
    return lo


def dimerized_matrix(n: int) -> np.ndarray:
    """Nominal dimerized model: identity plus the DIMER_PAIRS entries."""
    c = np.eye(n)
    for (i, j), value in DIMER_PAIRS.items():
        if max(i, j) > n:
            raise ValueError(f"dimerized model needs at least {max(i, j)} sites, got {n}")
        c[i - 1, j - 1] = c[j - 1, i - 1] = value
    return c


def build_correlation_matrix(
    model: str,
    geometry: Geometry,
    rc_angstrom: float | None = None,
    power: float = 2.0,
    beta: float | None = None,
) -> CorrelationMatrix:
    """Spatial correlation matrix for one of ``SPATIAL_MODELS``.

    ``exponential`` needs ``rc_angstrom``.  ``inverse_square`` uses
    ``find_max_beta`` unless ``beta`` is given.
    """
    n = geometry.n_sites
    if model == "none":
        c = np.eye(n)
        tag = "none"
    elif model == "dimerized":
        # the nominal pair values give a slightly indefinite matrix (min eig ~ -2e-4)
        c, factor = shrink_to_positive_definite(dimerized_matrix(n))
        return correlation_from_matrix(c, "dimerized", shrinkage=factor)
    elif model == "exponential":
        if rc_angstrom is None or not rc_angstrom > 0:
            raise ValueError("exponential model needs a positive rc_angstrom")
        c = _with_unit_diagonal(np.exp(-geometry.distances / rc_angstrom))
        tag = f"exponential_{rc_angstrom:g}A"
    elif model == "inverse_square":
        if beta is None:
            beta = find_max_beta(geometry, power)
        c = inverse_power_matrix(geometry, beta, power)
        tag = f"inverse_square_b{beta:.4f}" if power == 2.0 else f"inverse_p{power:g}_b{beta:.4f}"
    else:
        raise ValueError(f"unknown spatial model {model!r}; expected one of {SPATIAL_MODELS}")
    return correlation_from_matrix(c, tag)


def shrink_to_positive_definite(c, min_eig: float = SHRINK_MIN_EIG):
    """Scale the off-diagonal part of a unit-diagonal matrix toward zero until
    its smallest eigenvalue is at least ``min_eig``.

    Returns ``(matrix, factor)``; ``factor`` is 1.0 when no change was needed.
    Zero entries stay zero and signs are preserved.
    """
    c = np.asarray(c, dtype=float)
    off = c - np.eye(len(c))
    lowest = _min_eig(c)
    if lowest >= min_eig:
        return c.copy(), 1.0
    # eigenvalues of I + f * off are 1 + f * eig(off)
    factor = (1.0 - min_eig) / (1.0 - lowest)
    return np.eye(len(c)) + factor * off, float(factor)


def correlation_from_matrix(c, model_tag: str = "custom", shrinkage: float = 1.0) -> CorrelationMatrix:
    c = np.array(c, dtype=float)
    if np.any(np.abs(np.diag(c) - 1.0) > 1e-12):
        raise ValueError("correlation matrix must have unit diagonal")
    if np.any(c < 0):
        raise ValueError("correlation matrix entries must be non-negative")
    L = cholesky(c)
    c.setflags(write=False)
    L.setflags(write=False)
    return CorrelationMatrix(matrix=c, cholesky_factor=L, model_tag=model_tag, shrinkage=shrinkage)


def trajectory_rng(master_seed: int, index: int) -> np.random.Generator:
    """Generator for trajectory ``index``, independent of all other indices."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(index,)))


def ou_decay(dt: float, tau_c: float) -> float:
    if not dt > 0 or not tau_c > 0:
        raise ValueError("dt and tau_c must be positive")
    return math.exp(-dt / tau_c)


def ou_step(u, dt: float, tau_c: float, rng: np.random.Generator) -> np.ndarray:
    """Advance unit-variance Ornstein-Uhlenbeck states by ``dt``."""
    a = ou_decay(dt, tau_c)
    u = np.asarray(u, dtype=float)
    return a * u + math.sqrt(1.0 - a * a) * rng.standard_normal(u.shape)


class OUNoise:
    """Correlated fields for a batch of independent trajectories on ``t_k = k dt``.

    Trajectory ``b`` draws only from ``rngs[b]``: ``n`` normals for the
    stationary start ``u(0)``, then ``n`` normals per step (buffered in blocks,
    which does not change the values).  A trajectory's field therefore does
    not depend on which batch it runs in.
    """

    block_size = 512

    def __init__(self, config: NoiseConfig, corr: CorrelationMatrix, dt: float, rngs):
        self.rngs = list(rngs)
        self.tau_c = config.tau_c
        self.sigma = config.sigma
        self.factor = self.sigma * np.asarray(corr.cholesky_factor)
        self.a = ou_decay(dt, config.tau_c)
        self.b = math.sqrt(1.0 - self.a * self.a)
        self.n = corr.n_sites
        self.u = np.stack([rng.standard_normal(self.n) for rng in self.rngs])
        self._xi = np.empty((len(self.rngs), 0, self.n))
        self._pos = 0

    def __len__(self):
        return len(self.rngs)

    def _mix(self, u):
        # explicit column loop: per-row result independent of batch size
        out = u[:, 0:1] * self.factor[:, 0]
        for j in range(1, self.n):
            out = out + u[:, j:j + 1] * self.factor[:, j]
        return out

    def current(self) -> np.ndarray:
        """``Delta`` at the current grid point, shape (batch, n)."""
        return self._mix(self.u)

    def advance(self) -> np.ndarray:
        """Step to the next grid point and return the new ``Delta``."""
        if self._pos == self._xi.shape[1]:
            self._xi = np.stack(
                [rng.standard_normal((self.block_size, self.n)) for rng in self.rngs]
            )
            self._pos = 0
        self.u = self.a * self.u + self.b * self._xi[:, self._pos]
        self._pos += 1
        return self._mix(self.u)


@dataclass(frozen=True)
class NoiseField:
    """Sampled field on ``times``: ``delta[k] = sigma * L @ u[k]`` (cm^-1)."""

    times: np.ndarray
    delta: np.ndarray
    u: np.ndarray


def sample_field(config: NoiseConfig, corr: CorrelationMatrix, n_steps: int, dt: float,
                 seed) -> NoiseField:
    """``n_steps + 1`` grid values of the correlated field, starting stationary.

    ``seed`` is an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    stream = OUNoise(config, corr, dt, [rng])
    u = np.empty((n_steps + 1, stream.n))
    delta = np.empty((n_steps + 1, stream.n))
    u[0] = stream.u[0]
    delta[0] = stream.current()[0]
    for k in range(1, n_steps + 1):
        delta[k] = stream.advance()[0]
        u[k] = stream.u[0]
    return NoiseField(times=dt * np.arange(n_steps + 1), delta=delta, u=u)


def refine_ou_path(u_coarse, dt_fine: float, tau_c: float, rng: np.random.Generator) -> np.ndarray:
    """Insert a midpoint between consecutive OU samples, conditioned on both ends.

    ``u_coarse`` has shape (m + 1, n) on a grid of spacing ``2 * dt_fine``; the
    result has shape (2m + 1, n) on spacing ``dt_fine`` and keeps every coarse
    value.  The refined path has exactly the OU law on the finer grid.
    """
    u_coarse = np.asarray(u_coarse, dtype=float)
    a = ou_decay(dt_fine, tau_c)
    mean = a * (u_coarse[:-1] + u_coarse[1:]) / (1.0 + a * a)
    sd = math.sqrt((1.0 - a * a) / (1.0 + a * a))
    mid = mean + sd * rng.standard_normal(mean.shape)
    out = np.empty((2 * len(u_coarse) - 1, u_coarse.shape[1]))
    out[0::2] = u_coarse
    out[1::2] = mid
    return out


class ReplayNoise:
    """Feeds a prescribed field to the propagator, one row per grid point.

    ``delta`` has shape (steps + 1, n) for one trajectory or
    (batch, steps + 1, n).
    """

    def __init__(self, delta, tau_c: float | None = None):
        d = np.asarray(delta, dtype=float)
        self.delta = d[None] if d.ndim == 2 else d
        self.tau_c = tau_c
        self._k = 0

    def __len__(self):
        return self.delta.shape[0]

    def current(self) -> np.ndarray:
        return self.delta[:, self._k]

    def advance(self) -> np.ndarray:
        self._k += 1
        if self._k >= self.delta.shape[1]:
            raise IndexError("prescribed noise field exhausted")
        return self.delta[:, self._k]
