"""Compiled inner loop for the pure-state propagator."""

import numpy as np
from numba import njit

TAYLOR_TOL = 1e-16
TAYLOR_MAX_TERMS = 40


@njit(cache=True)
def advance_pure_states(psi, ground, trap, h_sites, half_loss, inv_hbar, dt,
                        gamma_t, trap_index, deltas):
    """Advance every trajectory through ``deltas.shape[1]`` steps in place.

    Per step, with the noise constant: psi(s) = sum_m V_m (s/dt)^m where
    V_m = (dt A)^m psi / m! and A = -i/hbar (H + diag(delta) - c) - Gamma/2.
    The scalar c (mean diagonal) only adds a global phase.  The series is
    summed until the newest term falls below TAYLOR_TOL.

    The trap gain integrates |psi_3|^2 term by term,
    int_0^dt (s/dt)^(m+k) ds = dt / (m + k + 1); the ground gain is the rest
    of the norm lost over the step, so the trace is conserved by construction.

    Returns False if any series failed to converge.
    """
    n_traj, n = psi.shape
    n_steps = deltas.shape[1]
    V = np.empty((TAYLOR_MAX_TERMS, n), dtype=np.complex128)
    diag = np.empty(n)
    for b in range(n_traj):
        for s in range(n_steps):
            centre = 0.0
            for i in range(n):
                diag[i] = h_sites[i, i] + deltas[b, s, i]
                centre += diag[i]
            centre /= n
            norm_before = 0.0
            for i in range(n):
                diag[i] -= centre
                V[0, i] = psi[b, i]
                norm_before += V[0, i].real ** 2 + V[0, i].imag ** 2
            n_terms = 0
            for m in range(1, TAYLOR_MAX_TERMS):
                biggest = 0.0
                scale = dt / m
                for i in range(n):
                    acc = diag[i] * V[m - 1, i]
                    for j in range(n):
                        if j != i:
                            acc += h_sites[i, j] * V[m - 1, j]
                    val = scale * (-1j * inv_hbar * acc - half_loss[i] * V[m - 1, i])
                    V[m, i] = val
                    a = abs(val.real) + abs(val.imag)
                    if a > biggest:
                        biggest = a
                if biggest < TAYLOR_TOL:
                    n_terms = m + 1
                    break
            if n_terms == 0:
                return False
            site_int = 0.0
            for m in range(n_terms):
                vm = V[m, trap_index]
                site_int += (vm.real ** 2 + vm.imag ** 2) / (2.0 * m + 1.0)
                for k in range(m + 1, n_terms):
                    site_int += 2.0 * (vm.conjugate() * V[k, trap_index]).real / (m + k + 1.0)
            norm_after = 0.0
            for i in range(n):
                acc = 0j
                for m in range(n_terms):
                    acc += V[m, i]
                psi[b, i] = acc
                norm_after += acc.real ** 2 + acc.imag ** 2
            trap_gain = gamma_t * dt * site_int
            trap[b] += trap_gain
            ground[b] += (norm_before - norm_after) - trap_gain
    return True
