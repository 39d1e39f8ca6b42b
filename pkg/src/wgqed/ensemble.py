"""Random configurations, Monte Carlo averaging, and derived fits.

Trials are reproducible in isolation: trial t of a run with seed s
draws from a counter-based generator keyed by (s, t), so any subset of
trials can be recomputed on any worker without touching shared state.
Averages are reduced in trial-index order, which makes the output
bitwise independent of the number of threads.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, MonteCarloError, NumericalError
from .greens import AtomEnsemble
from .tables import ResultTable
from .waveguide import WaveguideGeometry

log = logging.getLogger("wgqed")


@dataclass(frozen=True)
class SamplingSpec:
    """How random clouds are drawn: size, extent, seed and trial count.

    Of the triple (n_atoms, density, length) give exactly two; the third
    follows from N = n * a * b * L.  All three may be given when they
    are consistent within the nearest-integer rounding of N.
    """

    n_atoms: int | None = None
    density: float | None = None
    length: float | None = None
    seed: int = 0
    trials: int = 1

    def __post_init__(self):
        given = sum(v is not None for v in (self.n_atoms, self.density, self.length))
        if given < 2:
            raise ConfigError(
                "need at least two of {n_atoms, density, length} (N = n*a*b*L)"
            )
        if self.n_atoms is not None and self.n_atoms < 1:
            raise ConfigError("n_atoms must be at least 1")
        if self.density is not None and self.density <= 0:
            raise ConfigError("density must be positive")
        if self.length is not None and self.length <= 0:
            raise ConfigError("length must be positive")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def resolve(self, geometry: WaveguideGeometry) -> tuple[int, float, float]:
        """Return the consistent triple (N, density, length) for a geometry."""
        area = geometry.cross_section_area
        n_atoms, density, length = self.n_atoms, self.density, self.length
        if n_atoms is None:
            n_atoms = int(round(density * area * length))
            if n_atoms < 1:
                raise ConfigError(
                    f"derived atom number {density * area * length:.3g} rounds below 1"
                )
        elif density is None:
            density = n_atoms / (area * length)
        elif length is None:
            length = n_atoms / (density * area)
        else:
            implied = density * area * length
            if abs(n_atoms - implied) > 1.0:
                raise ConfigError(
                    f"inconsistent triple: N={n_atoms} but n*a*b*L={implied:.4g} "
                    "(constraint N = n*a*b*L)"
                )
        return n_atoms, density, length


def sample_configuration(
    spec: SamplingSpec, geometry: WaveguideGeometry, trial_index: int
) -> AtomEnsemble:
    """Draw one uniform cloud; a pure function of (seed, trial_index)."""
    n_atoms, _, length = spec.resolve(geometry)
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence((spec.seed, trial_index)))
    )
    u = rng.random((n_atoms, 3))
    positions = np.column_stack(
        [
            u[:, 0] * geometry.a,
            u[:, 1] * geometry.b,
            (u[:, 2] - 0.5) * length,
        ]
    )
    return AtomEnsemble(positions=positions, geometry=geometry)


@dataclass(frozen=True)
class Statistic:
    """Sample mean and its standard error over Monte Carlo trials."""

    mean: float | np.ndarray
    stderr: float | np.ndarray
    trials_used: int


@dataclass(frozen=True)
class MonteCarloResult:
    stats: dict[str, Statistic]
    trials_used: int
    trials_failed: int
    failure_messages: tuple[str, ...] = ()

    def __getitem__(self, key: str) -> Statistic:
        return self.stats[key]


def run_monte_carlo(worker, spec: SamplingSpec, threads: int = 1) -> MonteCarloResult:
    """Average a per-trial experiment over random configurations.

    ``worker(trial_index)`` must be a pure function returning a dict of
    observables (floats or equally shaped arrays).  Trials failing with
    a numerical or domain error are logged and excluded; the run aborts
    if more than 1% of them fail.  Reduction is ordered by trial index,
    so means are bitwise identical for any thread count.
    """
    trials = spec.trials
    indices = range(trials)
    catchable = (NumericalError, DomainError, np.linalg.LinAlgError)

    def guarded(t):
        try:
            return worker(t)
        except catchable as exc:
            return exc

    if threads <= 1:
        outcomes = [guarded(t) for t in indices]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(guarded, indices))

    failures = [(t, o) for t, o in enumerate(outcomes) if isinstance(o, Exception)]
    if len(failures) > 0.01 * trials:
        first = "; ".join(f"trial {t}: {e}" for t, e in failures[:3])
        raise MonteCarloError(
            f"{len(failures)}/{trials} trials failed (> 1%): {first}"
        )
    for t, exc in failures:
        log.warning("trial %d excluded: %s", t, exc)

    acc_sum: dict[str, np.ndarray] = {}
    acc_sq: dict[str, np.ndarray] = {}
    used = 0
    for outcome in outcomes:
        if isinstance(outcome, Exception):
            continue
        used += 1
        for key, value in outcome.items():
            value = np.asarray(value, dtype=float)
            if key not in acc_sum:
                acc_sum[key] = np.zeros_like(value)
                acc_sq[key] = np.zeros_like(value)
            acc_sum[key] += value
            acc_sq[key] += value * value
    if used == 0:
        raise MonteCarloError("no successful trials")

    stats = {}
    for key in acc_sum:
        mean = acc_sum[key] / used
        if used > 1:
            var = np.maximum(acc_sq[key] / used - mean * mean, 0.0) * used / (used - 1)
            stderr = np.sqrt(var / used)
        else:
            stderr = np.zeros_like(mean)
        if mean.ndim == 0:
            stats[key] = Statistic(float(mean), float(stderr), used)
        else:
            stats[key] = Statistic(mean, stderr, used)
    return MonteCarloResult(
        stats=stats,
        trials_used=used,
        trials_failed=len(failures),
        failure_messages=tuple(f"trial {t}: {e}" for t, e in failures),
    )


@dataclass(frozen=True)
class FitResult:
    value: float
    stderr: float
    r_squared: float
    n_points: int
    warning: str | None = None


def _linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares slope, its standard error, and R^2."""
    coeff, cov = np.polyfit(x, y, 1, cov=True)
    slope = coeff[0]
    resid = y - np.polyval(coeff, x)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(np.sqrt(cov[0, 0])), r2


def fit_extinction(
    profile: ResultTable,
    window: float = 0.6,
    z_column: str = "z_center",
    amp_column: str = "amp_mean",
) -> FitResult:
    """Extinction coefficient from a binned amplitude profile.

    Fits log(mean amplitude) versus z over the central ``window``
    fraction of the cloud and returns alpha = -slope (amplitude
    convention: |beta| ~ exp(-alpha z)).  Edge bins are excluded because
    boundary effects bend the profile there.
    """
    z = profile.column(z_column)
    amp = profile.column(amp_column)
    good = np.isfinite(amp) & (amp > 0)
    z, amp = z[good], amp[good]
    if z.size:
        lo = z.min() + (1.0 - window) / 2.0 * (z.max() - z.min())
        hi = z.max() - (1.0 - window) / 2.0 * (z.max() - z.min())
        sel = (z >= lo) & (z <= hi)
        z, amp = z[sel], amp[sel]
    if z.size < 10:
        raise DomainError(
            f"extinction fit needs >= 10 populated bins in the window, got {z.size}"
        )
    slope, slope_err, r2 = _linear_fit(z, np.log(amp))
    note = None
    if r2 < 0.8:
        note = f"poor fit quality: R^2 = {r2:.3f} < 0.8"
        warnings.warn(note, RuntimeWarning, stacklevel=2)
    return FitResult(value=-slope, stderr=slope_err, r_squared=r2, n_points=z.size, warning=note)


def fit_localization_length(
    table: ResultTable,
    length_column: str = "length",
    log_t_column: str = "lnt_mean",
) -> FitResult:
    """Localization length xi from mean log-transmission versus length.

    Uses the self-averaging convention (average of log T, not log of
    average T); xi = -1/slope.  A non-negative slope means no
    exponential attenuation was resolved.
    """
    length = table.column(length_column)
    lnt = table.column(log_t_column)
    good = np.isfinite(lnt)
    length, lnt = length[good], lnt[good]
    if length.size < 4:
        raise DomainError(f"localization fit needs >= 4 lengths, got {length.size}")
    if length.max() < 3.0 * length.min():
        raise DomainError("lengths must span at least a factor 3")
    slope, slope_err, r2 = _linear_fit(length, lnt)
    if slope >= 0:
        note = "no localization detected (non-negative slope of ln T vs L)"
        warnings.warn(note, RuntimeWarning, stacklevel=2)
        return FitResult(
            value=math.inf, stderr=math.inf, r_squared=r2, n_points=length.size, warning=note
        )
    xi = -1.0 / slope
    return FitResult(
        value=xi,
        stderr=slope_err / slope**2,
        r_squared=r2,
        n_points=length.size,
        warning=None,
    )
