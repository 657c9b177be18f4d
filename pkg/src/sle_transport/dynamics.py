"""Stochastic Liouville propagation of the excitation density matrix.

For one noise realization the density matrix obeys

    d rho/dt = -i/hbar [H_el + diag(Delta(t)), rho]
               + gamma_l sum_j D[|0><j|] rho + gamma_t D[|trap><3|] rho,

with ``D[A] rho = A rho A^+ - (A^+ A rho + rho A^+ A) / 2``.  The noise is
sampled on the step grid and held constant over each step.

Two integrators are available.  ``"abm"`` is a fixed-step fourth-order
Adams-Bashforth-Moulton predictor-corrector (PECE) on the full density matrix,
started with three classical Runge-Kutta steps.  ``"exact"`` (the default)
uses the fact that a site-localized start stays pure on the site block and
propagates the amplitude vector with the step exponential to machine
precision.  The rough noise path limits ABM to second order in dt, which is
not enough to keep the state positive to 1e-8 at practical step sizes.

Trajectories are integrated as a stack, one independent system per leading
index; nothing couples the slices, so a trajectory's result does not depend on
the batch it was run in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import advance_pure_states
from .constants import HBAR_CM_FS, PER_PS
from .model import Geometry, SiteHamiltonian
from .observables import mean_displacement, site_populations, total_coherence

TRAP_SITE = 3

TRACE_TOL = 1e-8
HERMITIAN_TOL = 1e-10
POSITIVITY_TOL = 1e-8
ABORT_FACTOR = 10.0


class TrajectoryError(RuntimeError):
    """A trajectory broke a state invariant by more than ten times its tolerance."""

    def __init__(self, message, trajectory_index=None):
        super().__init__(message)
        self.trajectory_index = trajectory_index


@dataclass(frozen=True)
class RateParams:
    """Radiative loss ``gamma_l`` (every site) and trapping ``gamma_t``
    (site 3 to trap), both in ps^-1."""

    gamma_l: float = 1e-3
    gamma_t: float = 1.0

    def __post_init__(self):
        if self.gamma_l < 0 or self.gamma_t < 0:
            raise ValueError("rates must be non-negative")


def embed_hamiltonian(h: SiteHamiltonian, reference: float | None = None) -> np.ndarray:
    """Site Hamiltonian placed in the (n+2)-dimensional space {ground, sites, trap}.

    Site energies are measured from ``reference`` (default: their mean), with
    ground and trap at zero.  This only changes the phase of ground/trap-site
    coherences and keeps the integrator away from the ~12000 cm^-1 carrier.
    """
    n = h.n_sites
    if reference is None:
        reference = float(np.mean(h.site_energies))
    out = np.zeros((n + 2, n + 2))
    out[1:n + 1, 1:n + 1] = h.matrix - reference * np.eye(n)
    return out


class LiouvilleRHS:
    """Right-hand side for fixed Hamiltonian and rates; noise passed per call."""

    def __init__(self, h_emb, rates: RateParams, trap_site: int = TRAP_SITE):
        h_emb = np.asarray(h_emb, dtype=float)
        self.dim = h_emb.shape[0]
        self.n = self.dim - 2
        if not 1 <= trap_site <= self.n:
            raise ValueError(f"trap site {trap_site} outside 1..{self.n}")
        self.trap_site = trap_site
        self.h = h_emb.astype(complex)
        self.gamma_l = rates.gamma_l * PER_PS
        self.gamma_t = rates.gamma_t * PER_PS
        # anticommutator part of every dissipator: rho_ij * -(k_i + k_j)/2
        k = np.zeros(self.dim)
        k[1:self.n + 1] = self.gamma_l
        k[trap_site] += self.gamma_t
        self.loss = -0.5 * (k[:, None] + k[None, :])
        self._scale = -1j / HBAR_CM_FS

    def __call__(self, rho, delta=None):
        comm = self.h @ rho - rho @ self.h
        if delta is not None:
            d = np.zeros(rho.shape[:-1])
            d[..., 1:self.n + 1] = delta
            comm = comm + (d[..., :, None] - d[..., None, :]) * rho
        out = self._scale * comm + self.loss * rho
        diag = np.diagonal(rho, axis1=-2, axis2=-1)
        out[..., 0, 0] += self.gamma_l * diag[..., 1:self.n + 1].sum(axis=-1)
        out[..., -1, -1] += self.gamma_t * diag[..., self.trap_site]
        return out


def rhs(rho, h_el, delta, rates: RateParams, trap_site: int = TRAP_SITE):
    """d rho/dt for a single state or a stack of states.

    ``h_el`` is either a SiteHamiltonian or an already embedded (n+2)-square
    array; ``delta`` holds the n site-energy shifts (cm^-1) or None.
    """
    h_emb = embed_hamiltonian(h_el) if isinstance(h_el, SiteHamiltonian) else h_el
    return LiouvilleRHS(h_emb, rates, trap_site)(np.asarray(rho, dtype=complex), delta)


@dataclass
class InvariantMonitor:
    max_trace_error: float = 0.0
    max_hermitian_error: float = 0.0
    min_eigenvalue: float = np.inf

    def check(self, rho, t, offset=0):
        tr = np.real(np.trace(rho, axis1=-2, axis2=-1))
        trace_err = np.abs(tr - 1.0)
        herm_err = np.max(np.abs(rho - np.conj(np.swapaxes(rho, -1, -2))), axis=(-2, -1))
        herm = 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))
        min_eig = np.linalg.eigvalsh(herm)[..., 0]
        self.max_trace_error = max(self.max_trace_error, float(trace_err.max()))
        self.max_hermitian_error = max(self.max_hermitian_error, float(herm_err.max()))
        self.min_eigenvalue = min(self.min_eigenvalue, float(min_eig.min()))
        bad = (
            (trace_err > ABORT_FACTOR * TRACE_TOL)
            | (herm_err > ABORT_FACTOR * HERMITIAN_TOL)
            | (min_eig < -ABORT_FACTOR * POSITIVITY_TOL)
            | ~np.isfinite(tr)
        )
        if np.any(bad):
            b = int(np.argmax(bad))
            raise TrajectoryError(
                f"state invariants violated at t = {t:g} fs (trace error {trace_err[b]:.3g}, "
                f"hermiticity error {herm_err[b]:.3g}, min eigenvalue {min_eig[b]:.3g}); "
                "the time step is probably too large",
                trajectory_index=offset + b,
            )


@dataclass
class TrajectoryResult:
    """Recorded observables of one trajectory (arrays indexed by record time)."""

    times: np.ndarray
    p_trap: np.ndarray
    total_coherence: np.ndarray
    mean_displacement: np.ndarray
    site_populations: np.ndarray
    max_trace_error: float = 0.0
    max_hermitian_error: float = 0.0
    min_eigenvalue: float = 0.0

    @property
    def p_survival(self) -> np.ndarray:
        return 1.0 - self.p_trap


@dataclass
class TrajectoryBatch:
    """Observables for a stack of trajectories, leading axis = trajectory."""

    times: np.ndarray
    p_trap: np.ndarray
    total_coherence: np.ndarray
    mean_displacement: np.ndarray
    site_populations: np.ndarray
    monitor: InvariantMonitor = field(default_factory=InvariantMonitor)
    final_rho: np.ndarray | None = None
    # site-block sums for the ensemble-averaged state, see propagate_batch
    state_ref: np.ndarray | None = None
    state_dev_sums: np.ndarray | None = None
    group_counts: np.ndarray | None = None

    def __len__(self):
        return self.p_trap.shape[0]

    def trajectory(self, b: int) -> TrajectoryResult:
        return TrajectoryResult(
            times=self.times,
            p_trap=self.p_trap[b],
            total_coherence=self.total_coherence[b],
            mean_displacement=self.mean_displacement[b],
            site_populations=self.site_populations[b],
            max_trace_error=self.monitor.max_trace_error,
            max_hermitian_error=self.monitor.max_hermitian_error,
            min_eigenvalue=self.monitor.min_eigenvalue,
        )


def check_time_step(dt: float, tau_c: float | None = None, max_dt: float = 2.0):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if tau_c is not None and dt > tau_c / 10.0 * (1 + 1e-12):
        raise ValueError(f"dt = {dt:g} fs exceeds tau_c / 10 = {tau_c / 10:g} fs")
    if dt > max_dt:
        raise ValueError(f"dt = {dt:g} fs exceeds the {max_dt:g} fs limit")


# Adams-Bashforth (predictor) and Adams-Moulton (corrector) weights, 4th order
_AB = np.array([55.0, -59.0, 37.0, -9.0]) / 24.0
_AM = np.array([9.0, 19.0, -5.0, 1.0]) / 24.0

INTEGRATORS = ("exact", "abm")


def _abm_steps(f, rho, delta, next_delta, dt, n_steps, on_step):
    hist = [f(rho, delta)]  # newest first
    for k in range(n_steps):
        if k < 3:
            # RK4 start-up, noise frozen at the left grid point
            k1 = hist[0]
            k2 = f(rho + 0.5 * dt * k1, delta)
            k3 = f(rho + 0.5 * dt * k2, delta)
            k4 = f(rho + dt * k3, delta)
            rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            delta = next_delta()
            hist.insert(0, f(rho, delta))
        else:
            f0, f1, f2, f3 = hist
            pred = rho + dt * (_AB[0] * f0 + _AB[1] * f1 + _AB[2] * f2 + _AB[3] * f3)
            delta = next_delta()
            fp = f(pred, delta)
            rho = rho + dt * (_AM[0] * fp + _AM[1] * f0 + _AM[2] * f1 + _AM[3] * f2)
            hist = [f(rho, delta), f0, f1, f2]
        on_step(k + 1, rho)
    return rho


class _PureSiteState:
    """Exact per-step propagation for a site-localized start.

    Every jump of the master equation leaves the site manifold, so one noise
    realization keeps the site block pure: rho_sites = psi psi^+ with

        d psi/dt = (-i/hbar H(t) - Gamma/2) psi,   Gamma = gamma_l 1 + gamma_t |3><3|,

    and the ground and trap populations collect gamma_l |psi|^2 and
    gamma_t |psi_3|^2.  With the noise constant over a step, psi is advanced by
    the Taylor series of the step exponential summed to machine precision; the
    polynomial form of psi(s) inside the step gives both gain integrals exactly.
    """

    def __init__(self, f: LiouvilleRHS, batch: int, initial_site: int, dt: float):
        n = f.n
        self.f = f
        self.dt = dt
        self.h_sites = np.ascontiguousarray(f.h[1:n + 1, 1:n + 1].real)
        self.half_loss = np.full(n, 0.5 * f.gamma_l)
        self.half_loss[f.trap_site - 1] += 0.5 * f.gamma_t
        self.psi = np.zeros((batch, n), dtype=complex)
        self.psi[:, initial_site - 1] = 1.0
        self.ground = np.zeros(batch)
        self.trap = np.zeros(batch)

    def advance(self, deltas):
        """``deltas``: (batch, steps, n) noise value held over each step."""
        # ground = lost norm minus trap gain; exact while psi holds all site population
        ok = advance_pure_states(
            self.psi, self.ground, self.trap, self.h_sites, self.half_loss,
            1.0 / HBAR_CM_FS, self.dt, self.f.gamma_t,
            self.f.trap_site - 1, np.ascontiguousarray(deltas, dtype=float),
        )
        if not ok:
            raise TrajectoryError("Taylor series of the step propagator did not converge; "
                                  "reduce dt")

    def rho(self):
        B, n = self.psi.shape
        out = np.zeros((B, n + 2, n + 2), dtype=complex)
        out[:, 1:n + 1, 1:n + 1] = self.psi[:, :, None] * self.psi[:, None, :].conj()
        out[:, 0, 0] = self.ground
        out[:, -1, -1] = self.trap
        return out


def propagate_batch(
    initial_site: int,
    h_el,
    rates: RateParams,
    noise=None,
    t_final: float = 20000.0,
    dt: float = 1.0,
    record_every: float = 10.0,
    geometry: Geometry | None = None,
    ref_site: int | None = None,
    batch_size: int | None = None,
    check_every: int = 1,
    index_offset: int = 0,
    integrator: str = "exact",
    groups=None,
    n_groups: int = 0,
) -> TrajectoryBatch:
    """Integrate a stack of trajectories from the site-localized state ``initial_site``.

    ``noise`` is an :class:`~sle_transport.noise.OUNoise` (one slice per
    trajectory) or None for the noiseless problem, in which case
    ``batch_size`` (default 1) sets the number of identical copies.
    Observables are recorded every ``record_every`` fs; invariants are checked
    on every ``check_every``-th record.

    ``integrator="abm"`` runs the Adams-Bashforth-Moulton scheme on the full
    density matrix; ``"exact"`` uses the pure-state reduction, exact for noise
    held constant over each step.

    With ``groups`` (one group id in ``0..n_groups-1`` per trajectory) the
    site block of every recorded state is also accumulated per group as a
    deviation from trajectory 0 of the batch, which is kept as ``state_ref``.
    The ensemble layer uses these sums for observables of the averaged state.
    """
    if integrator not in INTEGRATORS:
        raise ValueError(f"unknown integrator {integrator!r}; expected one of {INTEGRATORS}")
    h_emb = embed_hamiltonian(h_el) if isinstance(h_el, SiteHamiltonian) else np.asarray(h_el)
    f = LiouvilleRHS(h_emb, rates)
    n, dim = f.n, f.dim
    if not 1 <= initial_site <= n:
        raise ValueError(f"initial_site must be in 1..{n}, got {initial_site}")
    if geometry is not None and geometry.n_sites != n:
        raise ValueError("geometry and Hamiltonian disagree on the number of sites")
    check_time_step(dt, getattr(noise, "tau_c", None))

    n_steps = int(round(t_final / dt))
    if n_steps < 1 or abs(n_steps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError("t_final must be a positive multiple of dt")
    stride = int(round(record_every / dt))
    if stride < 1 or abs(stride * dt - record_every) > 1e-9 * record_every:
        raise ValueError("record_every must be a positive multiple of dt")
    if n_steps % stride:
        raise ValueError("t_final must be a multiple of record_every")

    B = len(noise) if noise is not None else (batch_size or 1)
    ref = ref_site if ref_site is not None else initial_site
    dist = geometry.distances if geometry is not None else np.zeros((n, n))

    n_rec = n_steps // stride + 1
    times = dt * stride * np.arange(n_rec)
    out_pt = np.empty((B, n_rec))
    out_coh = np.empty((B, n_rec))
    out_disp = np.empty((B, n_rec))
    out_pops = np.empty((B, n_rec, n))
    monitor = InvariantMonitor()
    if groups is not None:
        groups = np.asarray(groups, dtype=int)
        if groups.shape != (B,) or groups.min() < 0 or groups.max() >= n_groups:
            raise ValueError("groups must hold one id in 0..n_groups-1 per trajectory")
        members = [np.flatnonzero(groups == g) for g in range(n_groups)]
        state_ref = np.empty((n_rec, n, n), dtype=complex)
        dev_sums = np.zeros((n_groups, n_rec, n, n), dtype=complex)

    def record(i, rho, t):
        out_pt[:, i] = np.real(rho[:, -1, -1])
        out_coh[:, i] = total_coherence(rho)
        out_disp[:, i] = mean_displacement(rho, dist, ref)
        out_pops[:, i] = site_populations(rho)
        if groups is not None:
            block = rho[:, 1:n + 1, 1:n + 1]
            state_ref[i] = block[0]
            dev = block - block[0]
            for g, idx in enumerate(members):
                if idx.size:
                    dev_sums[g, i] = dev[idx].sum(axis=0)
        if i % check_every == 0 or i == n_rec - 1:
            monitor.check(rho, t, index_offset)

    if noise is None:
        def next_delta():
            return None
        delta = None
    else:
        next_delta = noise.advance
        delta = noise.current()

    if integrator == "abm":
        rho = np.zeros((B, dim, dim), dtype=complex)
        rho[:, initial_site, initial_site] = 1.0
        record(0, rho, 0.0)

        def on_step(k, rho):
            if k % stride == 0:
                record(k // stride, rho, k * dt)

        rho = _abm_steps(f, rho, delta, next_delta, dt, n_steps, on_step)
    else:
        state = _PureSiteState(f, B, initial_site, dt)
        record(0, state.rho(), 0.0)
        block = np.zeros((B, stride, n))
        for i in range(1, n_rec):
            if noise is not None:
                for s in range(stride):
                    block[:, s] = delta
                    delta = next_delta()
            state.advance(block)
            record(i, state.rho(), i * stride * dt)
        rho = state.rho()

    return TrajectoryBatch(
        times=times,
        p_trap=out_pt,
        total_coherence=out_coh,
        mean_displacement=out_disp,
        site_populations=out_pops,
        monitor=monitor,
        final_rho=rho,
        state_ref=state_ref if groups is not None else None,
        state_dev_sums=dev_sums if groups is not None else None,
        group_counts=np.bincount(groups, minlength=n_groups) if groups is not None else None,
    )


def propagate(
    initial_site: int,
    h_el,
    rates: RateParams,
    noise=None,
    t_final: float = 20000.0,
    dt: float = 1.0,
    record_every: float = 10.0,
    geometry: Geometry | None = None,
    ref_site: int | None = None,
    integrator: str = "exact",
) -> TrajectoryResult:
    """Single trajectory; ``noise`` must then hold exactly one slice."""
    if noise is not None and len(noise) != 1:
        raise ValueError("propagate takes a single-trajectory noise source")
    batch = propagate_batch(initial_site, h_el, rates, noise, t_final, dt, record_every,
                            geometry, ref_site, integrator=integrator)
    return batch.trajectory(0)
