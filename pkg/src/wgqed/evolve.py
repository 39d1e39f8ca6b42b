"""Time evolution of single-excitation amplitudes.

A state is the complex amplitude vector b(t) of the 3N singly excited
(atom, sublevel) basis states in the frame rotating at the transition
frequency; it evolves linearly, db/dt = M b, with M the effective
matrix from :mod:`wgqed.greens`.  Two independent integration routes
are provided, eigendecomposition of M and an adaptive ODE integrator,
and their agreement is part of the test suite.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConvergenceError
from .greens import AtomEnsemble, EffectiveHamiltonian, amplitude_index
from .tables import ResultTable

# Eigenvector matrices with condition numbers beyond this are treated
# as numerically defective and the ODE route is used instead.
_EIG_COND_LIMIT = 1e10


@dataclass(frozen=True)
class AmplitudeState:
    """Amplitude vector b at one instant, in units of 1/gamma0."""

    t: float
    b: np.ndarray

    def __post_init__(self):
        b = np.array(self.b, dtype=complex)
        if b.ndim != 1 or b.size % 3 != 0:
            raise ValueError("amplitude vector must be flat with 3N entries")
        b.setflags(write=False)
        object.__setattr__(self, "b", b)

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.b) ** 2

    @property
    def atom_populations(self) -> np.ndarray:
        """Sublevel-summed population of each atom, shape (n_atoms,)."""
        return self.populations.reshape(-1, 3).sum(axis=1)

    @property
    def total_population(self) -> float:
        return float(np.sum(np.abs(self.b) ** 2))


def initial_state(ensemble: AtomEnsemble, atom_index: int, m_j: int) -> AmplitudeState:
    """Unit amplitude on one Zeeman sublevel of one atom at t = 0."""
    if not 0 <= atom_index < ensemble.n_atoms:
        raise IndexError(f"atom index {atom_index} out of range for N={ensemble.n_atoms}")
    b = np.zeros(3 * ensemble.n_atoms, dtype=complex)
    b[amplitude_index(atom_index, m_j)] = 1.0
    return AmplitudeState(t=0.0, b=b)


def propagate(
    hamiltonian: EffectiveHamiltonian,
    state: AmplitudeState,
    t_grid,
    method: str = "auto",
) -> list[AmplitudeState]:
    """Evolve a state along a time grid.

    ``method`` selects the route: "eig" expands the initial vector in
    eigenmodes of M and sums exponentials, "ode" integrates db/dt = M b
    with an adaptive high-order Runge-Kutta scheme, and "auto" uses the
    eigenroute unless its eigenvector matrix is ill-conditioned, in
    which case it records a warning and falls back to the integrator.
    The grid must be non-decreasing and start at ``state.t``.
    """
    if method not in ("auto", "eig", "ode"):
        raise ValueError(f"unknown method {method!r}")
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ValueError("t_grid must be a non-empty 1-D sequence")
    if np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be non-decreasing")
    if abs(t_grid[0] - state.t) > 1e-12:
        raise ValueError(f"t_grid must start at the state time {state.t}")
    mat = hamiltonian.matrix
    if mat.shape[0] != state.b.size:
        raise ValueError("state length does not match the Hamiltonian dimension")
    tau = t_grid - state.t

    if method in ("auto", "eig"):
        lam, vec = np.linalg.eig(mat)
        cond = np.linalg.cond(vec)
        if cond > _EIG_COND_LIMIT:
            warnings.warn(
                f"eigenvector matrix condition {cond:.2e} exceeds {_EIG_COND_LIMIT:.0e}; "
                "falling back to the ODE integrator",
                RuntimeWarning,
                stacklevel=2,
            )
            if method == "auto":
                method = "ode"
        if method != "ode":
            coeff = np.linalg.solve(vec, state.b)
            amps = (np.exp(np.outer(tau, lam)) * coeff[None, :]) @ vec.T
            return [AmplitudeState(t=float(t), b=a) for t, a in zip(t_grid, amps)]

    return _propagate_ode(mat, state, t_grid, tau)


def _propagate_ode(mat, state, t_grid, tau) -> list[AmplitudeState]:
    n = state.b.size

    def rhs(_, y):
        z = mat @ (y[:n] + 1j * y[n:])
        return np.concatenate([z.real, z.imag])

    y0 = np.concatenate([state.b.real, state.b.imag])
    span = (0.0, float(tau[-1]) if tau[-1] > 0 else 0.0)
    if span[1] == 0.0:
        return [AmplitudeState(t=float(t), b=state.b.copy()) for t in t_grid]
    sol = solve_ivp(
        rhs, span, y0, method="DOP853", t_eval=tau, rtol=1e-10, atol=1e-12
    )
    if not sol.success:
        raise ConvergenceError(f"amplitude integration failed: {sol.message}")
    out = []
    for idx, t in enumerate(t_grid):
        out.append(AmplitudeState(t=float(t), b=sol.y[:n, idx] + 1j * sol.y[n:, idx]))
    return out


def population_trace(
    states: list[AmplitudeState],
    labels: tuple[str, str, str] = ("m-1", "m0", "m+1"),
) -> ResultTable:
    """Tabulate per-atom, per-sublevel and total populations over time.

    ``labels`` names the three sublevel slots per atom; the default is
    the spherical triplet, for Cartesian-basis states pass
    ("x", "y", "z").
    """
    if not states:
        raise ValueError("empty state sequence")
    dim = states[0].b.size
    n_atoms = dim // 3
    cols = ["t"]
    for i in range(n_atoms):
        cols.extend(f"p{i}_{lab}" for lab in labels)
    cols.append("p_total")
    rows = np.empty((len(states), len(cols)))
    for r, st in enumerate(states):
        pops = st.populations
        rows[r, 0] = st.t
        rows[r, 1 : 1 + dim] = pops
        rows[r, -1] = pops.sum()
    return ResultTable(columns=cols, rows=rows)
