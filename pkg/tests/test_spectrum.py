"""Collective eigenvalue analysis: trace identity, conventions, schemas."""

import numpy as np
import pytest

from wgqed.greens import AtomEnsemble, build_effective_hamiltonian
from wgqed.spectrum import (
    CollectiveState,
    collective_spectrum,
    spectrum_histogram,
    spectrum_table,
)
from wgqed.waveguide import WaveguideGeometry

G = WaveguideGeometry(3.0, 6.0)


def small_ham():
    pos = np.array([[1.2, 2.1, 0.0], [1.6, 3.8, 0.7], [0.9, 4.4, 5.0]])
    return build_effective_hamiltonian(AtomEnsemble(pos, G))


class TestCollectiveSpectrum:
    def test_count_and_order(self):
        states = collective_spectrum(small_ham())
        assert len(states) == 9
        shifts = [s.lam.real for s in states]
        assert shifts == sorted(shifts)

    def test_trace_identity(self):
        ham = small_ham()
        states = collective_spectrum(ham)
        total = sum(s.lam for s in states)
        assert abs(total - np.trace(ham.reemission_matrix())) < 1e-9

    def test_single_atom_center_rates(self):
        # one atom at the center of a guide whose only open mode is
        # x-polarized: the m=-1/m=+1 pair hybridizes into a bright x
        # dipole at the full mode rate and a dark y dipole, while m=0
        # (z dipole) stays pure and dark
        ens = AtomEnsemble(np.array([[1.5, 3.0, 0.0]]), G)
        states = collective_spectrum(build_effective_hamiltonian(ens))
        kz = np.sqrt(1.0 - (np.pi / 6.0) ** 2)
        rates = sorted(s.decay_rate for s in states)
        expected = sorted([0.0, 0.0, 6 * np.pi / (18 * kz)])
        assert np.allclose(rates, expected, atol=1e-6)
        parts = sorted(s.participation for s in states)
        assert np.allclose(parts, [1.0, 2.0, 2.0], atol=1e-9)

    def test_matrix_eigenvalue_relation(self):
        # lambda_M = -1/2 + i Lambda / 2 links the evolution matrix
        # spectrum to the re-emission spectrum
        ham = small_ham()
        lam_m = np.sort_complex(np.linalg.eigvals(ham.matrix))
        states = collective_spectrum(ham)
        mapped = np.sort_complex(np.array([-0.5 + 0.5j * s.lam for s in states]))
        assert np.max(np.abs(lam_m - mapped)) < 1e-10

    def test_decay_rates_physical(self):
        states = collective_spectrum(small_ham())
        assert all(s.decay_rate >= -1e-3 for s in states)

    def test_shift_property(self):
        s = CollectiveState(lam=2.0 + 0.5j, decay_rate=1.5, participation=1.0)
        assert s.shift == 2.0  # Re(Lambda), in units of gamma0/2

    def test_empty(self):
        ham = build_effective_hamiltonian(AtomEnsemble(np.empty((0, 3)), G))
        assert collective_spectrum(ham) == []


class TestSpectrumTable:
    def test_schema(self):
        states = collective_spectrum(small_ham())
        table = spectrum_table(states, trial=3)
        assert table.columns == [
            "trial",
            "re_lambda",
            "im_lambda",
            "decay_rate",
            "participation",
        ]
        assert table.n_rows == 9
        assert np.all(table.column("trial") == 3)
        assert np.allclose(
            table.column("decay_rate"), 1.0 + table.column("im_lambda")
        )


class TestSpectrumHistogram:
    def test_counts_conserved(self):
        states = collective_spectrum(small_ham())
        hist = spectrum_histogram(states, shift_bins=8, decay_bins=8)
        assert hist.column("count").sum() == len(states)
        # only occupied cells are stored
        assert np.all(hist.column("count") > 0)

    def test_empty_input(self):
        hist = spectrum_histogram([])
        assert hist.n_rows == 0

    def test_explicit_ranges(self):
        states = collective_spectrum(small_ham())
        hist = spectrum_histogram(
            states,
            shift_bins=4,
            decay_bins=4,
            shift_range=(-10, 10),
            decay_range=(0, 3),
        )
        assert np.all(hist.column("shift_lo") >= -10)
        assert np.all(hist.column("shift_hi") <= 10)
