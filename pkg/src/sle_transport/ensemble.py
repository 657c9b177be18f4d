"""Seed-reproducible trajectory ensembles and survival-probability fits."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import RateParams, TrajectoryError, propagate_batch
from .model import Geometry, SiteHamiltonian
from .noise import CorrelationMatrix, NoiseConfig, OUNoise, trajectory_rng
from .observables import observables  # noqa: F401  (public re-export)

# observables that are linear in rho: per-trajectory samples, plain statistics
LINEAR_OBSERVABLES = ("p_trap", "mean_displacement", "site_populations")
OBSERVABLES = ("p_trap", "total_coherence", "mean_displacement", "site_populations")

# trajectory k contributes to jackknife group k % JACKKNIFE_GROUPS
JACKKNIFE_GROUPS = 20

WORKERS_ENV = "SLE_TRANSPORT_WORKERS"


@dataclass(frozen=True)
class EnsembleConfig:
    """Everything that determines an ensemble apart from the seed and size."""

    hamiltonian: SiteHamiltonian
    geometry: Geometry
    noise: NoiseConfig
    correlation: CorrelationMatrix
    rates: RateParams = RateParams()
    initial_site: int = 1
    t_final: float = 20000.0
    dt: float = 1.0
    record_every: float = 10.0
    ref_site: int | None = None
    integrator: str = "exact"

    def with_(self, **changes) -> "EnsembleConfig":
        return replace(self, **changes)


@dataclass
class EnsembleStatistics:
    """Pointwise statistics across trajectories on a shared time grid.

    ``mean``/``sd``/``se`` map observable names to arrays over time
    (``site_populations`` has an extra trailing site axis).  ``samples`` keeps
    the per-trajectory records of the linear observables, trajectory index
    along axis 0.

    ``total_coherence`` is evaluated on the ensemble-averaged density matrix,
    since the coherence of the mean state is not the mean of per-realization
    coherences.  Its ``se`` is a delete-a-group jackknife estimate and ``sd``
    is ``se * sqrt(n_trajectories)``.  The averaged site block is stored as a
    reference state plus per-group sums of deviations from it.
    """

    times: np.ndarray
    mean: dict
    sd: dict
    se: dict
    n_trajectories: int
    master_seed: int
    first_index: int = 0
    samples: dict = field(default_factory=dict, repr=False)
    max_trace_error: float = 0.0
    max_hermitian_error: float = 0.0
    min_eigenvalue: float = 0.0
    state_ref: np.ndarray | None = field(default=None, repr=False)
    state_dev_sums: np.ndarray | None = field(default=None, repr=False)
    group_counts: np.ndarray | None = None

    @property
    def p_surv_mean(self) -> np.ndarray:
        return 1.0 - self.mean["p_trap"]

    def at(self, name: str, t: float):
        """(mean, sd, se) of an observable at the record time closest to ``t``."""
        i = int(np.argmin(np.abs(self.times - t)))
        return self.mean[name][i], self.sd[name][i], self.se[name][i]

    def mean_state(self) -> np.ndarray:
        """Ensemble-averaged site block of the density matrix, (time, n, n)."""
        return self.state_ref + self.state_dev_sums.sum(axis=0) / self.n_trajectories

    def coherence_replicates(self) -> np.ndarray:
        """Total coherence of the leave-one-group-out mean states, (groups, time)."""
        return _coherence_replicates(self.state_ref, self.state_dev_sums, self.group_counts)

    def merge(self, other: "EnsembleStatistics") -> "EnsembleStatistics":
        """Pooled statistics of two disjoint ensembles on the same grid."""
        if not np.array_equal(self.times, other.times):
            raise ValueError("cannot merge ensembles recorded on different grids")
        na, nb = self.n_trajectories, other.n_trajectories
        n = na + nb
        mean, sd, se = {}, {}, {}
        for key in LINEAR_OBSERVABLES:
            ma, mb = self.mean[key], other.mean[key]
            delta = mb - ma
            m2 = (self.sd[key] ** 2 * (na - 1) + other.sd[key] ** 2 * (nb - 1)
                  + delta**2 * na * nb / n)
            mean[key] = ma + delta * nb / n
            sd[key] = np.sqrt(m2 / (n - 1))
            se[key] = sd[key] / math.sqrt(n)
        samples = {}
        if self.samples and other.samples:
            first, second = (self, other) if self.first_index <= other.first_index else (other, self)
            samples = {k: np.concatenate([first.samples[k], second.samples[k]]) for k in self.samples}
        ref, dev, counts = _pool_states([self, other])
        mean["total_coherence"], sd["total_coherence"], se["total_coherence"] = \
            _coherence_stats(ref, dev, counts)
        return EnsembleStatistics(
            times=self.times, mean=mean, sd=sd, se=se, n_trajectories=n,
            master_seed=self.master_seed, first_index=min(self.first_index, other.first_index),
            samples=samples,
            max_trace_error=max(self.max_trace_error, other.max_trace_error),
            max_hermitian_error=max(self.max_hermitian_error, other.max_hermitian_error),
            min_eigenvalue=min(self.min_eigenvalue, other.min_eigenvalue),
            state_ref=ref, state_dev_sums=dev, group_counts=counts,
        )


def summarize(x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, sample standard deviation and standard error along axis 0.

    Deviations are taken from the first sample before summing, so identical
    samples give exactly zero spread.
    """
    x = np.asarray(x, dtype=float)
    k = x.shape[0]
    if k < 2:
        raise ValueError("need at least two samples")
    shifted = np.moveaxis(x - x[0], 0, -1)  # trajectory axis last: pairwise sums
    s1 = shifted.sum(axis=-1)
    s2 = (shifted**2).sum(axis=-1)
    mean = x[0] + s1 / k
    var = np.maximum(s2 - s1 * s1 / k, 0.0) / (k - 1)
    sd = np.sqrt(var)
    return mean, sd, sd / math.sqrt(k)


def _pool_states(parts):
    """Re-reference per-part deviation sums to the first part's reference."""
    ref = parts[0].state_ref
    dev = np.zeros_like(parts[0].state_dev_sums)
    counts = np.zeros_like(parts[0].group_counts)
    for p in parts:
        shift = p.state_ref - ref
        dev += p.state_dev_sums + p.group_counts[:, None, None, None] * shift
        counts += p.group_counts
    return ref, dev, counts


def _off_diagonal_abs_sum(block) -> np.ndarray:
    a = np.abs(block)
    return a.sum(axis=(-2, -1)) - np.trace(a, axis1=-2, axis2=-1)


def _coherence_replicates(ref, dev, counts) -> np.ndarray:
    total = dev.sum(axis=0)
    k = counts.sum()
    used = np.flatnonzero(counts > 0)
    out = np.empty((used.size, ref.shape[0]))
    for r, g in enumerate(used):
        out[r] = _off_diagonal_abs_sum(ref + (total - dev[g]) / (k - counts[g]))
    return out


def _jackknife_se(full, replicates) -> np.ndarray:
    g = replicates.shape[0]
    d = replicates - replicates[0]  # shifted: identical replicates give exactly zero
    d = d - d.mean(axis=0)
    return np.sqrt((g - 1) / g * (d**2).sum(axis=0))


def _coherence_stats(ref, dev, counts):
    k = int(counts.sum())
    full = _off_diagonal_abs_sum(ref + dev.sum(axis=0) / k)
    se = _jackknife_se(full, _coherence_replicates(ref, dev, counts))
    return full, se * math.sqrt(k), se


def _run_chunk(config: EnsembleConfig, master_seed: int, indices):
    rngs = [trajectory_rng(master_seed, k) for k in indices]
    noise = OUNoise(config.noise, config.correlation, config.dt, rngs)
    return propagate_batch(
        config.initial_site, config.hamiltonian, config.rates, noise,
        t_final=config.t_final, dt=config.dt, record_every=config.record_every,
        geometry=config.geometry, ref_site=config.ref_site,
        index_offset=indices[0], integrator=config.integrator,
        groups=[k % JACKKNIFE_GROUPS for k in indices], n_groups=JACKKNIFE_GROUPS,
    )


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return 1


def run_ensemble(
    config: EnsembleConfig,
    n_trajectories: int = 100,
    master_seed: int = 0,
    first_index: int = 0,
    chunk_size: int | None = None,
    workers: int | None = None,
) -> EnsembleStatistics:
    """Run trajectories ``first_index .. first_index + n_trajectories - 1``.

    Trajectory ``k`` draws its noise from ``trajectory_rng(master_seed, k)``,
    so results do not depend on chunking or on the number of workers.
    """
    if n_trajectories < 2:
        raise ValueError("an ensemble needs at least two trajectories")
    workers = workers or default_workers()
    indices = list(range(first_index, first_index + n_trajectories))
    if chunk_size is None:
        chunk_size = max(1, math.ceil(n_trajectories / workers))
    chunks = [indices[i:i + chunk_size] for i in range(0, n_trajectories, chunk_size)]

    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_chunk, config, master_seed, c) for c in chunks]
            batches = [fut.result() for fut in futures]
    else:
        batches = [_run_chunk(config, master_seed, c) for c in chunks]

    times = batches[0].times
    samples = {name: np.concatenate([getattr(b, name) for b in batches])
               for name in LINEAR_OBSERVABLES}
    mean, sd, se = {}, {}, {}
    for name, x in samples.items():
        mean[name], sd[name], se[name] = summarize(x)
    ref, dev, counts = _pool_states(batches)
    mean["total_coherence"], sd["total_coherence"], se["total_coherence"] = \
        _coherence_stats(ref, dev, counts)
    return EnsembleStatistics(
        times=times, mean=mean, sd=sd, se=se, n_trajectories=n_trajectories,
        master_seed=master_seed, first_index=first_index, samples=samples,
        max_trace_error=max(b.monitor.max_trace_error for b in batches),
        max_hermitian_error=max(b.monitor.max_hermitian_error for b in batches),
        min_eigenvalue=min(b.monitor.min_eigenvalue for b in batches),
        state_ref=ref, state_dev_sums=dev, group_counts=counts,
    )


def _trapezoid(x, t):
    return np.sum(0.5 * (x[..., 1:] + x[..., :-1]) * np.diff(t), axis=-1)


def time_integral(stats: EnsembleStatistics, name: str, t0: float, t1: float):
    """Trapezoidal integral of an observable over [t0, t1] as (mean, sd, se).

    Linear observables are integrated per trajectory; total coherence is
    integrated on the averaged state with a jackknife error.
    """
    mask = (stats.times >= t0 - 1e-9) & (stats.times <= t1 + 1e-9)
    if mask.sum() < 2:
        raise ValueError("integration window holds fewer than two record points")
    t = stats.times[mask]
    if name == "total_coherence":
        full = float(_trapezoid(stats.mean[name][mask], t))
        reps = _trapezoid(stats.coherence_replicates()[:, mask], t)
        se = float(_jackknife_se(full, reps))
        return full, se * math.sqrt(stats.n_trajectories), se
    per_traj = _trapezoid(stats.samples[name][:, mask], t)
    mean, sd, se = summarize(per_traj)
    return float(mean), float(sd), float(se)


@dataclass(frozen=True)
class SurvivalFit:
    """Least-squares fits of ln P_surv.

    ``short_coeffs`` are c0..c3 of a cubic in t on the short window;
    the long window fits ln P_surv = intercept - rate * t.  Residuals are RMS
    deviations of ln P_surv.  Units of t follow the input grid.
    """

    short_coeffs: np.ndarray
    long_rate: float
    long_intercept: float
    short_window: tuple
    long_window: tuple
    short_residual: float
    long_residual: float


def _window(t, y, window):
    lo, hi = window
    mask = (t >= lo) & (t <= hi)
    if mask.sum() < 5:
        raise ValueError(f"window {window} contains fewer than 5 usable points")
    return t[mask], y[mask]


def fit_survival(times, p_surv=None, short_window=(0.0, 2000.0),
                 long_window=(10000.0, 20000.0)) -> SurvivalFit:
    """Fit ln P_surv with a cubic on ``short_window`` and a line on ``long_window``.

    ``times`` may be an :class:`EnsembleStatistics`, in which case its mean
    survival probability is used.  The series is truncated at the first
    non-positive value of P_surv.
    """
    if isinstance(times, EnsembleStatistics):
        p_surv = times.p_surv_mean
        times = times.times
    t = np.asarray(times, dtype=float)
    p = np.asarray(p_surv, dtype=float)
    bad = np.flatnonzero(p <= 0)
    if bad.size:
        t, p = t[:bad[0]], p[:bad[0]]
    logp = np.log(p)

    ts, ys = _window(t, logp, short_window)
    short = np.polynomial.polynomial.polyfit(ts, ys, 3)
    short_res = ys - np.polynomial.polynomial.polyval(ts, short)

    tl, yl = _window(t, logp, long_window)
    intercept, slope = np.polynomial.polynomial.polyfit(tl, yl, 1)
    long_res = yl - (intercept + slope * tl)

    return SurvivalFit(
        short_coeffs=short,
        long_rate=float(-slope),
        long_intercept=float(intercept),
        short_window=tuple(short_window),
        long_window=tuple(long_window),
        short_residual=float(np.sqrt(np.mean(short_res**2))),
        long_residual=float(np.sqrt(np.mean(long_res**2))),
    )
