"""Collective light scattering and decay of atoms in a rectangular waveguide.

The package models point J=0 -> J=1 scatterers coupled through the
electromagnetic field of an infinite perfectly conducting rectangular
guide.  Everything is expressed in dimensionless units: lengths in
1/k0, times in 1/gamma0, rates in gamma0, with the free-space
wavenumber and linewidth both set to one unless stated otherwise.

Layering, lowest first:

* :mod:`wgqed.waveguide` - geometry, guided-mode census, mode fields.
* :mod:`wgqed.greens` - field propagator between points, atomic
  ensembles, the effective non-Hermitian evolution matrix.
* :mod:`wgqed.evolve` - time propagation of excitation amplitudes.
* :mod:`wgqed.steady` - monochromatic driving, transmission spectra,
  polarization profiles.
* :mod:`wgqed.spectrum` - collective eigenvalue analysis.
* :mod:`wgqed.ensemble` - random clouds, Monte Carlo reduction, fits.
* :mod:`wgqed.tables` - the delimited output format.
* :mod:`wgqed.cli` - the ``wgqed`` command.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    MonteCarloError,
    NumericalError,
)
from .waveguide import (
    Mode,
    TruncationPolicy,
    WaveguideGeometry,
    classify_modes,
    mode_function,
)
from .greens import (
    AtomEnsemble,
    EffectiveHamiltonian,
    amplitude_index,
    build_effective_hamiltonian,
    free_space_green,
    green_tensor,
    radiating_green,
    self_term,
)
from .evolve import AmplitudeState, initial_state, population_trace, propagate
from .steady import (
    Probe,
    ScatteringSetup,
    detector_intensity,
    polarization_profile,
    reference_intensity,
    steady_amplitudes,
    transmission,
)
from .spectrum import (
    CollectiveState,
    collective_spectrum,
    spectrum_histogram,
    spectrum_table,
)
from .ensemble import (
    MonteCarloResult,
    SamplingSpec,
    Statistic,
    fit_extinction,
    fit_localization_length,
    run_monte_carlo,
    sample_configuration,
)
from .tables import ResultTable

__all__ = [
    "__version__",
    "ConfigError",
    "ConvergenceError",
    "DomainError",
    "MonteCarloError",
    "NumericalError",
    "Mode",
    "TruncationPolicy",
    "WaveguideGeometry",
    "classify_modes",
    "mode_function",
    "AtomEnsemble",
    "EffectiveHamiltonian",
    "amplitude_index",
    "build_effective_hamiltonian",
    "free_space_green",
    "green_tensor",
    "radiating_green",
    "self_term",
    "AmplitudeState",
    "initial_state",
    "population_trace",
    "propagate",
    "Probe",
    "ScatteringSetup",
    "detector_intensity",
    "polarization_profile",
    "reference_intensity",
    "steady_amplitudes",
    "transmission",
    "CollectiveState",
    "collective_spectrum",
    "spectrum_histogram",
    "spectrum_table",
    "MonteCarloResult",
    "SamplingSpec",
    "Statistic",
    "fit_extinction",
    "fit_localization_length",
    "run_monte_carlo",
    "sample_configuration",
    "ResultTable",
]
