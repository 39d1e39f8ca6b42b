"""Steady-state response to monochromatic probe light.

The probe is injected by a fictitious source atom whose linewidth is
taken to zero analytically: substituting b_e = beta_e exp(-i delta t)
into the amplitude equations with the source amplitude frozen at unity
leaves the linear system

    (i delta I - M) beta = (i/2) v,     v_e = (3/(2 k0^3)) e_m^* . D(r_e, r_s) . e_ms,

for the stationary amplitudes beta.  A second fictitious atom, the
detector, absorbs without re-emitting: the intensity it reports is the
squared field built from the direct source term plus the re-emission of
every real atom.  Transmission divides that intensity by its value in
the empty guide at the same axial distance, which is interference-free
and equals the incident flux in a lossless single-mode guide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ensemble import SamplingSpec, run_monte_carlo, sample_configuration
from .errors import DomainError, NumericalError
from .greens import (
    SPHERICAL_BASIS,
    AtomEnsemble,
    EffectiveHamiltonian,
    build_effective_hamiltonian,
    green_tensor,
    radiating_green,
)
from .tables import ResultTable
from .waveguide import TruncationPolicy, WaveguideGeometry

# Atoms closer axially than this to the source defeat the far-field
# construction of the probe; see Probe.min_clearance.
DEFAULT_MIN_CLEARANCE = 100.0


@dataclass(frozen=True)
class Probe:
    """Monochromatic drive injected by a far-away source dipole.

    ``delta`` is the detuning of the probe from the atomic resonance in
    units of gamma0.  The source dipole oscillates in the spherical
    component ``source_sublevel``; m_J = -1 couples to the traveling
    TE(0,1) mode, m_J = 0 is dark to it and serves null tests.
    """

    delta: float
    source_position: np.ndarray
    source_sublevel: int = -1
    min_clearance: float = DEFAULT_MIN_CLEARANCE

    def __post_init__(self):
        pos = np.array(self.source_position, dtype=float)
        if pos.shape != (3,):
            raise ValueError("source_position must be a 3-vector")
        pos.setflags(write=False)
        object.__setattr__(self, "source_position", pos)
        if self.source_sublevel not in (-1, 0, 1):
            raise ValueError("source_sublevel must be -1, 0 or +1")
        if self.min_clearance < 0:
            raise ValueError("min_clearance must be non-negative")


@dataclass(frozen=True)
class DetectorReading:
    """Polarization-insensitive intensity at one point, arbitrary units."""

    position: np.ndarray
    field: np.ndarray
    intensity: float

    def __post_init__(self):
        if self.intensity < 0:
            raise ValueError("intensity must be non-negative")


def _pair_block(r, rp, hamiltonian: EffectiveHamiltonian) -> np.ndarray:
    """Propagator block consistent with the Hamiltonian's mode content."""
    geom = hamiltonian.ensemble.geometry
    if hamiltonian.evanescent_flag:
        return green_tensor(r, rp, geom, hamiltonian.k0, hamiltonian.truncation)
    return radiating_green(r, rp, geom, hamiltonian.k0, hamiltonian.truncation)


def _drive_vector(hamiltonian: EffectiveHamiltonian, probe: Probe) -> np.ndarray:
    """Source column v of the steady-state system, in the matrix basis."""
    ens = hamiltonian.ensemble
    e_src = SPHERICAL_BASIS[:, probe.source_sublevel + 1]
    scale = 1.5 / hamiltonian.k0**3
    v = np.zeros(3 * ens.n_atoms, dtype=complex)
    for j in range(ens.n_atoms):
        block = _pair_block(ens.positions[j], probe.source_position, hamiltonian)
        col = scale * (block @ e_src)
        if hamiltonian.basis == "spherical":
            col = SPHERICAL_BASIS.conj().T @ col
        v[3 * j : 3 * j + 3] = col
    return v


def steady_amplitudes(
    hamiltonian: EffectiveHamiltonian, probe: Probe, _drive: np.ndarray | None = None
) -> np.ndarray:
    """Stationary amplitudes beta of all atoms under the probe.

    Solves (i delta I - M) beta = (i/2) v with one step of iterative
    refinement; if the refined residual still exceeds 1e-10 of the
    drive norm the system is reported as near-singular together with
    its condition estimate (this happens when delta hits a real
    eigenvalue of a lossless build).
    """
    n = hamiltonian.n_atoms
    if n == 0:
        return np.zeros(0, dtype=complex)
    z_atoms = hamiltonian.ensemble.positions[:, 2]
    clearance = float(np.min(np.abs(z_atoms - probe.source_position[2])))
    if clearance < probe.min_clearance:
        raise ValueError(
            f"source only {clearance:.3g}/k0 from the nearest atom; "
            f"the far-field probe construction requires {probe.min_clearance:.3g}/k0"
        )
    v = _drive_vector(hamiltonian, probe) if _drive is None else _drive
    a = 1j * probe.delta * np.eye(3 * n) - hamiltonian.matrix
    rhs = 0.5j * v
    tol = 1e-10 * float(np.linalg.norm(rhs))
    try:
        beta = np.linalg.solve(a, rhs)
        resid = rhs - a @ beta
        if np.linalg.norm(resid) > tol:
            beta = beta + np.linalg.solve(a, resid)
            resid = rhs - a @ beta
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"steady-state system singular: {exc}") from exc
    if np.linalg.norm(resid) > tol:
        raise NumericalError(
            "steady-state solve near-singular: residual "
            f"{np.linalg.norm(resid):.2e} > {tol:.2e}, condition estimate "
            f"{np.linalg.cond(a):.2e}"
        )
    return beta


def _detector_row(
    position, hamiltonian: EffectiveHamiltonian, probe: Probe
) -> tuple[np.ndarray, np.ndarray]:
    """Direct source field at the detector and the beta -> field map."""
    ens = hamiltonian.ensemble
    e_src = SPHERICAL_BASIS[:, probe.source_sublevel + 1]
    e0 = _pair_block(position, probe.source_position, hamiltonian) @ e_src
    w = np.zeros((3, 3 * ens.n_atoms), dtype=complex)
    for j in range(ens.n_atoms):
        block = _pair_block(position, ens.positions[j], hamiltonian)
        if hamiltonian.basis == "spherical":
            block = block @ SPHERICAL_BASIS
        w[:, 3 * j : 3 * j + 3] = block
    return e0, w


def detector_intensity(
    position, amplitudes: np.ndarray, hamiltonian: EffectiveHamiltonian, probe: Probe
) -> DetectorReading:
    """Field and intensity a non-re-emitting detector atom reports.

    The reading sums |field|^2 over all three polarizations (the
    detector is polarization-insensitive).  Intensities are comparable
    within a run; absolute units carry the arbitrary source dipole.
    """
    position = np.asarray(position, dtype=float)
    ens = hamiltonian.ensemble
    if ens.n_atoms:
        dist = np.linalg.norm(ens.positions - position[None, :], axis=1)
        if np.min(dist) < 1e-9:
            raise DomainError("detector position coincides with an atom")
    if amplitudes.shape != (3 * ens.n_atoms,):
        raise ValueError("amplitude vector does not match the ensemble size")
    e0, w = _detector_row(position, hamiltonian, probe)
    field = e0 + w @ amplitudes if ens.n_atoms else e0
    return DetectorReading(
        position=position,
        field=field,
        intensity=float(np.sum(np.abs(field) ** 2)),
    )


# ---------------------------------------------------------------------------
# Configuration-averaged experiments


@dataclass(frozen=True)
class ScatteringSetup:
    """Geometry, cloud statistics and probe wiring of a scattering run.

    The source sits on the guide axis a ``standoff`` before the cloud
    edge and the detector the same distance behind it, far enough that
    every evanescent mode has died out over the gap and only radiating
    modes link them to the cloud.
    """

    geometry: WaveguideGeometry
    sampling: SamplingSpec
    source_sublevel: int = -1
    standoff: float = 500.0
    k0: float = 1.0
    evanescent_flag: bool = True
    truncation: TruncationPolicy | None = None
    threads: int = 1

    def endpoints(self) -> tuple[np.ndarray, np.ndarray, float]:
        """Source position, detector position, and cloud length."""
        _, _, length = self.sampling.resolve(self.geometry)
        zed = length / 2.0 + self.standoff
        mid_x = self.geometry.a / 2.0
        mid_y = self.geometry.b / 2.0
        return (
            np.array([mid_x, mid_y, -zed]),
            np.array([mid_x, mid_y, +zed]),
            length,
        )


def _empty_hamiltonian(setup: ScatteringSetup) -> EffectiveHamiltonian:
    empty = AtomEnsemble(np.empty((0, 3)), setup.geometry)
    return build_effective_hamiltonian(
        empty,
        k0=setup.k0,
        evanescent_flag=setup.evanescent_flag,
        truncation=setup.truncation,
    )


def reference_intensity(setup: ScatteringSetup, detector_position=None) -> float:
    """Detector intensity of the bare guide (no atoms), the T = 1 level."""
    source, detector, _ = setup.endpoints()
    if detector_position is not None:
        detector = np.asarray(detector_position, dtype=float)
    probe = Probe(0.0, source, setup.source_sublevel)
    reading = detector_intensity(
        detector, np.zeros(0, dtype=complex), _empty_hamiltonian(setup), probe
    )
    return reading.intensity


def transmission(setup: ScatteringSetup, delta_grid) -> ResultTable:
    """Configuration-averaged transmission spectrum T(delta).

    Every trial draws a fresh cloud, builds its effective matrix once,
    and reuses it for the whole detuning grid.  Columns report the mean
    and standard error of T and of ln T (the latter feeds localization
    fits, which average the log).
    """
    delta_grid = np.atleast_1d(np.asarray(delta_grid, dtype=float))
    source, detector, length = setup.endpoints()
    i_ref = reference_intensity(setup)

    def worker(trial: int) -> dict:
        ens = sample_configuration(setup.sampling, setup.geometry, trial)
        ham = build_effective_hamiltonian(
            ens,
            k0=setup.k0,
            evanescent_flag=setup.evanescent_flag,
            truncation=setup.truncation,
        )
        probe0 = Probe(0.0, source, setup.source_sublevel)
        drive = _drive_vector(ham, probe0)
        e0, w = _detector_row(detector, ham, probe0)
        t_vals = np.empty(delta_grid.size)
        for d, delta in enumerate(delta_grid):
            probe = Probe(float(delta), source, setup.source_sublevel)
            beta = steady_amplitudes(ham, probe, _drive=drive)
            field = e0 + w @ beta
            t_vals[d] = float(np.sum(np.abs(field) ** 2)) / i_ref
        return {"t": t_vals, "lnt": np.log(t_vals)}

    result = run_monte_carlo(worker, setup.sampling, threads=setup.threads)
    t_stat = result["t"]
    lnt_stat = result["lnt"]
    n_atoms, density, _ = setup.sampling.resolve(setup.geometry)
    return ResultTable.from_columns(
        {
            "delta": delta_grid,
            "t_mean": np.atleast_1d(t_stat.mean),
            "t_stderr": np.atleast_1d(t_stat.stderr),
            "lnt_mean": np.atleast_1d(lnt_stat.mean),
            "lnt_stderr": np.atleast_1d(lnt_stat.stderr),
        },
        meta={
            "trials_used": str(result.trials_used),
            "trials_failed": str(result.trials_failed),
            "n_atoms": str(n_atoms),
            "density": f"{density:.17g}",
            "length": f"{length:.17g}",
            "reference_intensity": f"{i_ref:.17g}",
        },
    )


def polarization_profile(
    setup: ScatteringSetup, delta: float, bin_width: float = 25.0
) -> ResultTable:
    """Binned polarization amplitude, phase and sublevel populations.

    Atoms are binned along z; amplitudes |p| of the transverse (x)
    dipole component p = (beta_{-1} - beta_{+1})/sqrt(2) are pooled over
    atoms and trials per bin.  ``amp_mean`` is the mean modulus |p|;
    ``coh_mean`` is the modulus of the mean (the coherent, configuration
    -averaged polarization, which obeys the exponential attenuation
    law); ``phase`` is the argument of that coherent mean, unwrapped
    bin to bin with increasing z.  Bins no atom ever visited stay NaN
    (gaps are reported, never interpolated).

    The guided phase advances by many turns per bin (kz times the bin
    width well exceeds pi), so naive pooling would both alias the
    bin-to-bin slope and suppress the pooled magnitude (averaging a
    winding phasor over a wide bin nearly cancels).  The pooling
    therefore runs on a fine auxiliary grid whose spacing keeps phase
    steps below pi for any guided wavenumber (those are below k0), the
    carrier slope is estimated from adjacent occupied fine cells, and
    each output bin sums its fine cells with the carrier winding
    divided out.  Pooling over trials matters here: within one trial
    the backscattered field forms standing waves that pin the local
    phase, and only the configuration average recovers the traveling
    wave.  The carrier is reported in the metadata; when the fine grid
    has no adjacent occupied cells it falls back to zero, reducing to
    bare sequential unwrapping.
    """
    source, _, length = setup.endpoints()
    n_bins = max(1, int(round(length / bin_width)))
    edges = np.linspace(-length / 2.0, length / 2.0, n_bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    fine_width = 1.0
    n_fine = max(1, int(round(length / fine_width)))
    fine_centers = -length / 2.0 + fine_width * (np.arange(n_fine) + 0.5)

    def worker(trial: int) -> dict:
        ens = sample_configuration(setup.sampling, setup.geometry, trial)
        ham = build_effective_hamiltonian(
            ens,
            k0=setup.k0,
            evanescent_flag=setup.evanescent_flag,
            truncation=setup.truncation,
        )
        probe = Probe(float(delta), source, setup.source_sublevel)
        beta = steady_amplitudes(ham, probe).reshape(-1, 3)
        z = ens.positions[:, 2]
        idx = np.clip(((z + length / 2.0) / bin_width).astype(int), 0, n_bins - 1)
        pol = (beta[:, 0] - beta[:, 2]) / math.sqrt(2.0)
        pops = np.abs(beta) ** 2

        def acc(weights=None):
            return np.bincount(idx, weights=weights, minlength=n_bins).astype(float)

        fine_idx = np.clip(((z + length / 2.0) / fine_width).astype(int), 0, n_fine - 1)
        return {
            "count": acc(),
            "amp_sum": acc(np.abs(pol)),
            "pop_m-1_sum": acc(pops[:, 0]),
            "pop_m0_sum": acc(pops[:, 1]),
            "pop_m+1_sum": acc(pops[:, 2]),
            "fine_count": np.bincount(fine_idx, minlength=n_fine).astype(float),
            "fine_re_sum": np.bincount(fine_idx, weights=pol.real, minlength=n_fine),
            "fine_im_sum": np.bincount(fine_idx, weights=pol.imag, minlength=n_fine),
        }

    result = run_monte_carlo(worker, setup.sampling, threads=setup.threads)
    count = result["count"].mean
    occupied = count > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        amp = np.where(occupied, result["amp_sum"].mean / count, np.nan)
        amp_err = np.where(occupied, result["amp_sum"].stderr / count, np.nan)
        pops = {
            key: np.where(occupied, result[f"{key}_sum"].mean / count, np.nan)
            for key in ("pop_m-1", "pop_m0", "pop_m+1")
        }
    fine = result["fine_re_sum"].mean + 1j * result["fine_im_sum"].mean
    carrier = _carrier_slope(fine_centers, fine)
    # Sum fine cells into output bins with the carrier winding divided
    # out, referenced to each bin center; the result is the coherent
    # mean polarization without the wide-bin phase cancellation.
    fine_to_bin = np.clip(
        ((fine_centers + length / 2.0) / bin_width).astype(int), 0, n_bins - 1
    )
    referenced = fine * result["fine_count"].mean.astype(bool)
    coherent = np.zeros(n_bins, dtype=complex)
    np.add.at(
        coherent,
        fine_to_bin,
        referenced * np.exp(-1j * carrier * (fine_centers - centers[fine_to_bin])),
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        coh_mean = np.where(occupied, np.abs(coherent) / count, np.nan)
    raw_phase = np.angle(coherent)
    phase = np.full(n_bins, np.nan)
    usable = occupied & (np.abs(coherent) > 0)
    phase[usable] = _unwrap_with_carrier(centers[usable], raw_phase[usable], carrier)
    n_samples = count * result.trials_used

    return ResultTable.from_columns(
        {
            "z_center": centers,
            "amp_mean": amp,
            "amp_stderr": amp_err,
            "coh_mean": coh_mean,
            "phase": phase,
            "pop_m-1": pops["pop_m-1"],
            "pop_m0": pops["pop_m0"],
            "pop_m+1": pops["pop_m+1"],
            "n_samples": n_samples,
        },
        meta={
            "delta": f"{delta:.17g}",
            "bin_width": f"{bin_width:.17g}",
            "trials_used": str(result.trials_used),
            "trials_failed": str(result.trials_failed),
            "phase_carrier": f"{carrier:.17g}",
            "amplitude_convention": "alpha fits decay of |p|, not |p|^2",
            "log_mean_convention": "localization fits average ln T over trials",
        },
    )


def _carrier_slope(z, pooled, k_max=1.05, step=0.002):
    """Phase advance per unit z of a pooled complex profile.

    Matched-filter search: the slope maximizing |sum_f c_f e^{-i s z_f}|
    over s in [-k_max, k_max].  Any guided wavenumber lies below k0, so
    the search window covers all physical slopes, and the fine-grid
    spacing of 1 makes the alias period (2 pi) fall far outside it.
    Integrating over the full profile keeps the estimate usable even
    when individual cells are noise-dominated; downstream unwrapping
    only needs the carrier to within half a turn per output bin.
    """
    occupied = np.abs(pooled) > 0
    zs = z[occupied]
    cs = pooled[occupied]
    if zs.size < 8:
        return 0.0
    s_grid = np.arange(-k_max, k_max + step, step)
    power = np.abs(np.exp(-1j * np.outer(s_grid, zs)) @ cs) ** 2
    j = int(np.argmax(power))
    if 0 < j < s_grid.size - 1:
        lo, mid, hi = power[j - 1], power[j], power[j + 1]
        denom = lo - 2.0 * mid + hi
        if denom < 0:
            return float(s_grid[j] + 0.5 * step * (lo - hi) / denom)
    return float(s_grid[j])


def _unwrap_with_carrier(z, raw, carrier):
    """Sequential +-pi jump correction applied to carrier-detrended phases."""
    out = np.empty_like(raw)
    out[0] = raw[0]
    for j in range(1, raw.size):
        predicted = out[j - 1] + carrier * (z[j] - z[j - 1])
        out[j] = predicted + math.remainder(raw[j] - predicted, 2.0 * math.pi)
    return out
