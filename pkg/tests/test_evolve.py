"""Time propagation: solver cross-validation, linearity, decay laws."""

import numpy as np
import pytest

from wgqed.errors import DomainError
from wgqed.evolve import AmplitudeState, initial_state, population_trace, propagate
from wgqed.greens import AtomEnsemble, build_effective_hamiltonian
from wgqed.waveguide import WaveguideGeometry

G = WaveguideGeometry(3.0, 6.0)


def two_atom_ham():
    pos = np.array([[1.5, 3.0, 0.0], [1.5, 3.0, 4.0]])
    return build_effective_hamiltonian(AtomEnsemble(pos, G))


class TestInitialState:
    def test_unit_population_on_chosen_component(self):
        ens = AtomEnsemble(np.array([[1.5, 3.0, 0.0], [1.5, 3.0, 4.0]]), G)
        s = initial_state(ens, 1, -1)
        assert s.t == 0.0
        assert s.total_population == 1.0
        assert s.b[3] == 1.0
        assert np.all(s.b[:3] == 0) and np.all(s.b[4:] == 0)

    def test_rejects_bad_labels(self):
        ens = AtomEnsemble(np.array([[1.5, 3.0, 0.0]]), G)
        with pytest.raises((ValueError, IndexError)):
            initial_state(ens, 1, -1)
        with pytest.raises(ValueError):
            initial_state(ens, 0, 2)


class TestPropagate:
    def test_solvers_agree(self):
        ham = two_atom_ham()
        s0 = initial_state(ham.ensemble, 0, -1)
        t = np.linspace(0.0, 5.0, 11)
        eig = propagate(ham, s0, t, method="eig")
        ode = propagate(ham, s0, t, method="ode")
        worst = max(
            np.max(np.abs(a.b - b.b)) for a, b in zip(eig, ode)
        )
        assert worst < 1e-7

    def test_linearity(self):
        ham = two_atom_ham()
        t = np.array([0.0, 3.0])
        b1 = np.zeros(6, complex)
        b1[0] = 1.0
        b2 = np.zeros(6, complex)
        b2[4] = 1.0
        out1 = propagate(ham, AmplitudeState(0.0, b1), t)[-1].b
        out2 = propagate(ham, AmplitudeState(0.0, b2), t)[-1].b
        out12 = propagate(ham, AmplitudeState(0.0, 0.3 * b1 + 2.0 * b2), t)[-1].b
        assert np.max(np.abs(out12 - 0.3 * out1 - 2.0 * out2)) < 1e-12

    def test_composability(self):
        ham = two_atom_ham()
        s0 = initial_state(ham.ensemble, 0, -1)
        direct = propagate(ham, s0, np.array([0.0, 4.0]))[-1]
        mid = propagate(ham, s0, np.array([0.0, 1.5]))[-1]
        resumed = propagate(ham, mid, np.array([1.5, 4.0]))[-1]
        assert resumed.t == direct.t
        assert np.max(np.abs(resumed.b - direct.b)) < 1e-9

    def test_single_atom_free_space_decay(self):
        # a huge cross-section approximates free space: e^{-gamma0 t}
        g = WaveguideGeometry(200.0, 200.0)
        ens = AtomEnsemble(np.array([[100.3, 99.1, 0.0]]), g)
        ham = build_effective_hamiltonian(ens)
        s0 = initial_state(ens, 0, -1)
        final = propagate(ham, s0, np.array([0.0, 3.0]))[-1]
        assert abs(final.total_population - np.exp(-3.0)) < 0.05 * np.exp(-3.0)

    def test_zero_mode_guide_conserves_population(self):
        g = WaveguideGeometry(3.0, 3.13)
        pos = np.array([[1.5, 1.565, 0.0], [1.5, 1.565, 3.0]])
        ham = build_effective_hamiltonian(AtomEnsemble(pos, g))
        s0 = initial_state(ham.ensemble, 0, -1)
        states = propagate(ham, s0, np.linspace(0.0, 10.0, 21))
        pops = np.array([s.total_population for s in states])
        assert np.max(np.abs(pops - 1.0)) < 1e-3

    def test_population_never_grows(self):
        ham = two_atom_ham()
        s0 = initial_state(ham.ensemble, 0, -1)
        states = propagate(ham, s0, np.linspace(0.0, 8.0, 40))
        pops = np.array([s.total_population for s in states])
        assert np.all(np.diff(pops) <= 1e-12)

    def test_grid_must_start_at_state_time(self):
        ham = two_atom_ham()
        s0 = initial_state(ham.ensemble, 0, -1)
        with pytest.raises(ValueError):
            propagate(ham, s0, np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            propagate(ham, s0, np.array([0.0, 2.0, 1.0]))


class TestPopulationTrace:
    def test_schema_and_values(self):
        ham = two_atom_ham()
        s0 = initial_state(ham.ensemble, 0, -1)
        states = propagate(ham, s0, np.linspace(0.0, 2.0, 5))
        table = population_trace(states)
        assert table.columns[0] == "t"
        assert table.columns[-1] == "p_total"
        assert len(table.columns) == 1 + 6 + 1
        assert np.allclose(table.column("t"), np.linspace(0.0, 2.0, 5))
        assert np.allclose(
            table.column("p_total"),
            [s.total_population for s in states],
        )
        # the initially excited component carries all population at t=0
        assert table.rows[0, 1] == 1.0
