"""Scalar observables of the (n+2)-level density matrix.

Basis ordering: index 0 is the global ground state, 1..n the sites, n+1 the trap.
All functions accept a single matrix or a stack ``(..., n+2, n+2)``.
"""

from __future__ import annotations

import numpy as np


def p_trap(rho) -> np.ndarray:
    return np.real(rho[..., -1, -1])


def site_populations(rho) -> np.ndarray:
    return np.real(np.diagonal(rho, axis1=-2, axis2=-1)[..., 1:-1])


def total_coherence(rho) -> np.ndarray:
    """Sum of |rho_ij| over site pairs i != j."""
    block = np.abs(rho[..., 1:-1, 1:-1])
    return block.sum(axis=(-2, -1)) - np.trace(block, axis1=-2, axis2=-1)


def mean_displacement(rho, distances, ref_site: int) -> np.ndarray:
    """Population-weighted distance from ``ref_site`` (1-based), Angstrom."""
    d = np.asarray(distances)[ref_site - 1]
    return site_populations(rho) @ d


def observables(rho, geometry, ref_site: int) -> dict:
    n = geometry.n_sites
    if not 1 <= ref_site <= n:
        raise ValueError(f"ref_site must be in 1..{n}, got {ref_site}")
    pt = p_trap(rho)
    return {
        "p_trap": pt,
        "p_surv": 1.0 - pt,
        "total_coherence": total_coherence(rho),
        "mean_displacement": mean_displacement(rho, geometry.distances, ref_site),
    }
