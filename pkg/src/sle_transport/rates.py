"""Blumen-Silbey exciton transition rates for exponentially correlated noise.

Frequencies are angular, rad/fs, obtained from energy gaps in cm^-1 as
omega = dE / hbar.  Spectral densities come out in cm^-2 fs; divide by
hbar**2 for a rate in fs^-1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import HBAR_CM_FS
from .model import ExcitonBasis

DEFAULT_BAND = (90.0, 350.0)


def lorentzian_spectrum(omega, sigma: float, tau_c: float):
    """J(omega) = 2 sigma^2 tau_c / (1 + tau_c^2 omega^2)."""
    if not np.all(np.asarray(tau_c) > 0):
        raise ValueError("tau_c must be positive")
    omega = np.asarray(omega, dtype=float)
    return 2.0 * sigma**2 * tau_c / (1.0 + (tau_c * omega) ** 2)


def gamma_t(omega, t, sigma: float, tau_c: float):
    """Time-dependent rate for a pair with frequency difference ``omega``.

    Written as J(omega) * (1 + e^{-t/tau_c} (tau_c omega sin(omega t) - cos(omega t)))
    so that the value at t = 0 is exactly zero.
    """
    if not np.all(np.asarray(tau_c) > 0):
        raise ValueError("tau_c must be positive")
    omega = np.asarray(omega, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    bracket = tau_c * omega * np.sin(omega * t) - np.cos(omega * t)
    return lorentzian_spectrum(omega, sigma, tau_c) * (1.0 + np.exp(-t / tau_c) * bracket)


def transient_bound(omega, t, sigma: float, tau_c: float):
    """Upper bound on |Gamma(t) - J(omega)|: 2 sigma^2 tau_c e^{-t/tau_c} / sqrt(1 + tau_c^2 omega^2)."""
    x = tau_c * np.asarray(omega, dtype=float)
    return 2.0 * sigma**2 * tau_c * np.exp(-np.asarray(t, dtype=float) / tau_c) / np.sqrt(1.0 + x * x)


def exciton_omega(basis: ExcitonBasis) -> np.ndarray:
    """omega_ab = (E_a - E_b) / hbar in rad/fs."""
    return basis.gaps() / HBAR_CM_FS


def gamma(alpha: int, beta: int, t, sigma: float, tau_c: float, basis: ExcitonBasis):
    """Transition rate between excitons ``alpha`` and ``beta`` (0-based) at time ``t`` fs."""
    n = basis.n
    if not (0 <= alpha < n and 0 <= beta < n):
        raise IndexError(f"exciton indices must be in 0..{n - 1}")
    return gamma_t(exciton_omega(basis)[alpha, beta], t, sigma, tau_c)


@dataclass(frozen=True)
class RateTable:
    """Pairwise frequencies and asymptotic rates; ``gamma`` is (len(times), n, n)."""

    omega: np.ndarray
    gamma_inf: np.ndarray
    sigma: float
    tau_c: float
    times: np.ndarray | None = None
    gamma: np.ndarray | None = None


def rate_table(basis: ExcitonBasis, sigma: float, tau_c: float, times=None) -> RateTable:
    omega = exciton_omega(basis)
    gamma_inf = lorentzian_spectrum(omega, sigma, tau_c)
    g = None
    if times is not None:
        times = np.asarray(times, dtype=float)
        g = gamma_t(omega[None], times[:, None, None], sigma, tau_c)
    return RateTable(omega=omega, gamma_inf=gamma_inf, sigma=sigma, tau_c=tau_c, times=times, gamma=g)


@dataclass(frozen=True)
class OptimalTauC:
    """tau_c* = hbar / |dE| per exciton pair (inf on the diagonal and for
    degenerate pairs) and the [min, max] over pairs whose gap lies in ``band``."""

    per_pair: np.ndarray
    band: tuple
    tau_range: tuple
    n_pairs_in_band: int


def tau_c_for_gap(gap_cm) -> np.ndarray:
    gap = np.abs(np.asarray(gap_cm, dtype=float))
    with np.errstate(divide="ignore"):
        return np.where(gap > 0, HBAR_CM_FS / np.where(gap > 0, gap, 1.0), np.inf)


def band_tau_range(band=DEFAULT_BAND) -> tuple:
    lo, hi = band
    if not 0 < lo < hi:
        raise ValueError("band must satisfy 0 < low < high")
    return HBAR_CM_FS / hi, HBAR_CM_FS / lo


def optimal_tau_c(basis: ExcitonBasis, band=DEFAULT_BAND, degeneracy_tol: float = 1e-9) -> OptimalTauC:
    lo, hi = band
    if not 0 <= lo < hi:
        raise ValueError("band must satisfy 0 <= low < high")
    gaps = np.abs(basis.gaps())
    gaps = np.where(gaps > degeneracy_tol, gaps, 0.0)
    iu = np.triu_indices(basis.n, 1)
    if not np.any(gaps[iu] > 0):
        raise ValueError("all exciton energies are degenerate; no optimal tau_c exists")
    per_pair = tau_c_for_gap(gaps)
    g = gaps[iu]
    sel = (g > 0) & (g >= lo) & (g <= hi)
    if sel.any():
        taus = HBAR_CM_FS / g[sel]
        tau_range = (float(taus.min()), float(taus.max()))
    else:
        tau_range = (float("nan"), float("nan"))
    return OptimalTauC(per_pair=per_pair, band=(float(lo), float(hi)), tau_range=tau_range,
                       n_pairs_in_band=int(sel.sum()))
