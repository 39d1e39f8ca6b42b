"""Collective eigenstates of the effective evolution matrix.

Diagonalizing the dimensionless coupling W (with M = -(1/2) I + (i/2) W)
gives complex eigenvalues Lambda whose real part is the collective shift
of the state in units of gamma0/2 and whose imaginary part fixes its
decay rate gamma = gamma0 (1 + Im Lambda).  The same information in
terms of the eigenvalues lambda_M of M itself is the affine map
lambda_M = -gamma/2 + i (Re Lambda)/2, so tabulating (Re Lambda,
Im Lambda, gamma) covers both conventions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError
from .greens import EffectiveHamiltonian
from .tables import ResultTable


@dataclass(frozen=True)
class CollectiveState:
    """One eigenstate of the coupling matrix W."""

    lam: complex
    decay_rate: float  # gamma0 (1 + Im lam); non-negative up to solver noise
    participation: float  # inverse participation ratio of the right eigenvector

    @property
    def shift(self) -> float:
        """Collective resonance shift Re Lambda."""
        return self.lam.real


def collective_spectrum(hamiltonian: EffectiveHamiltonian) -> list[CollectiveState]:
    """All 3N collective states, sorted by their shift Re Lambda."""
    w = hamiltonian.reemission_matrix()
    if w.shape[0] == 0:
        return []
    try:
        lam, vec = np.linalg.eig(w)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(
            f"eigensolver failed on a {w.shape[0]}x{w.shape[0]} matrix "
            f"(norm {np.linalg.norm(w):.3e}): {exc}"
        ) from exc
    norms = np.linalg.norm(vec, axis=0)
    vec = vec / norms[None, :]
    ipr = 1.0 / np.sum(np.abs(vec) ** 4, axis=0)
    order = np.argsort(lam.real, kind="stable")
    return [
        CollectiveState(
            lam=complex(lam[s]),
            decay_rate=float(1.0 + lam[s].imag),
            participation=float(ipr[s]),
        )
        for s in order
    ]


def spectrum_table(
    states: list[CollectiveState], trial: int = 0, meta: dict | None = None
) -> ResultTable:
    """Flatten collective states into rows (trial, Re, Im, decay, participation)."""
    rows = np.array(
        [
            [trial, st.lam.real, st.lam.imag, st.decay_rate, st.participation]
            for st in states
        ]
    )
    return ResultTable(
        columns=["trial", "re_lambda", "im_lambda", "decay_rate", "participation"],
        rows=rows if states else np.empty((0, 5)),
        meta=dict(meta or {}),
    )


def spectrum_histogram(
    states: list[CollectiveState],
    shift_bins: int = 60,
    decay_bins: int = 60,
    shift_range: tuple[float, float] | None = None,
    decay_range: tuple[float, float] | None = None,
) -> ResultTable:
    """Occupancy counts over a (shift, decay rate) grid.

    Only occupied cells are emitted, so an empty state list yields an
    empty table.  Cell edges are included as columns to keep the table
    self-describing.
    """
    cols = ["shift_lo", "shift_hi", "decay_lo", "decay_hi", "count"]
    if not states:
        return ResultTable(columns=cols, rows=np.empty((0, 5)))
    shifts = np.array([st.shift for st in states])
    decays = np.array([st.decay_rate for st in states])
    ranges = [
        shift_range or (shifts.min(), shifts.max()),
        decay_range or (decays.min(), decays.max()),
    ]
    counts, se, de = np.histogram2d(
        shifts, decays, bins=[shift_bins, decay_bins], range=ranges
    )
    ii, jj = np.nonzero(counts)
    rows = np.column_stack(
        [se[ii], se[ii + 1], de[jj], de[jj + 1], counts[ii, jj]]
    )
    return ResultTable(columns=cols, rows=rows)
