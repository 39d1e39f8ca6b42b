"""Mode census, dispersion, boundary conditions, and the mode-field contract."""

import numpy as np
import pytest

from wgqed.waveguide import (
    Mode,
    TruncationPolicy,
    WaveguideGeometry,
    classify_modes,
    mode_function,
    sector_arrays,
    transverse_wavenumbers,
)


def radiating(geometry, k0=1.0):
    return [m for m in classify_modes(geometry, k0=k0) if m.is_radiating]


class TestGeometry:
    def test_attributes(self):
        g = WaveguideGeometry(3.0, 6.0)
        assert g.a == 3.0 and g.b == 6.0
        assert g.cross_section_area == 18.0

    @pytest.mark.parametrize("a,b", [(0.0, 1.0), (-1.0, 2.0), (1.0, 0.0)])
    def test_rejects_degenerate(self, a, b):
        with pytest.raises(ValueError):
            WaveguideGeometry(a, b)


class TestCensus:
    # Radiating-mode counts at a=3 pin down the cutoff arithmetic around
    # b = pi (first TE cutoff) and b = 2 pi (second).
    @pytest.mark.parametrize(
        "b,count",
        [(3.13, 0), (6.0, 1), (6.25, 1), (6.28, 1), (6.283, 1), (6.30, 2)],
    )
    def test_radiating_count(self, b, count):
        assert len(radiating(WaveguideGeometry(3.0, b))) == count

    def test_single_mode_is_te01(self):
        modes = radiating(WaveguideGeometry(3.0, 6.0))
        assert (modes[0].family, modes[0].m, modes[0].n) == ("TE", 0, 1)

    def test_dispersion_exact(self):
        g = WaveguideGeometry(3.0, 6.3)
        for mode in classify_modes(g):
            kx, ky = transverse_wavenumbers(mode, g)
            # kz^2 + kc^2 = k0^2 must hold exactly for both branches
            assert abs(mode.kz**2 + kx**2 + ky**2 - 1.0) < 1e-12

    def test_sorted_by_transverse_wavenumber(self):
        g = WaveguideGeometry(3.0, 6.3)
        kappas = [m.kappa for m in classify_modes(g)]
        assert kappas == sorted(kappas)

    def test_kz_branch(self):
        g = WaveguideGeometry(3.0, 6.3)
        for mode in classify_modes(g):
            if mode.is_radiating:
                assert mode.kz.real > 0 and mode.kz.imag == 0
            else:
                assert mode.kz.real == 0 and mode.kz.imag > 0

    def test_no_te00(self):
        g = WaveguideGeometry(30.0, 30.0)
        for mode in classify_modes(g):
            assert (mode.m, mode.n) != (0, 0)
            if mode.family == "TM":
                assert mode.m >= 1 and mode.n >= 1

    def test_k0_scaling_of_census(self):
        # doubling k0 at half the size leaves the census invariant
        g1 = WaveguideGeometry(3.0, 6.28)
        g2 = WaveguideGeometry(1.5, 3.14)
        c1 = [(m.family, m.m, m.n) for m in radiating(g1)]
        c2 = [(m.family, m.m, m.n) for m in radiating(g2, k0=2.0)]
        assert c1 == c2


class TestTruncationPolicy:
    def test_cap_formula(self):
        pol = TruncationPolicy(kappa_z_product=40.0, z_switch=0.5)
        assert pol.kappa_cap(100.0) == 0.4
        assert pol.kappa_cap(-100.0) == 0.4
        # below z_switch the cap saturates at its z_switch value
        assert pol.kappa_cap(0.1) == pol.kappa_cap(0.5) == 80.0

    def test_kappa_max_clips(self):
        pol = TruncationPolicy(kappa_max=5.0)
        assert pol.kappa_cap(1.0) == 5.0
        assert pol.kappa_cap(100.0) == 0.4

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            TruncationPolicy(kappa_z_product=-1.0)
        with pytest.raises(ValueError):
            TruncationPolicy(z_switch=0.0)


class TestModeFunction:
    def setup_method(self):
        self.g = WaveguideGeometry(3.0, 6.3)
        self.modes = classify_modes(self.g)

    def test_tangential_field_vanishes_on_walls(self):
        # PEC walls: E_y = E_z = 0 at x = 0, a; E_x = E_z = 0 at y = 0, b
        for mode in self.modes[:20]:
            for y in (0.7, 3.1):
                for x in (0.0, self.g.a):
                    e = mode_function(mode, self.g, x, y)
                    assert abs(e[1]) < 1e-13 and abs(e[2]) < 1e-13
            for x in (0.4, 2.2):
                for y in (0.0, self.g.b):
                    e = mode_function(mode, self.g, x, y)
                    assert abs(e[0]) < 1e-13 and abs(e[2]) < 1e-13

    def test_te_has_no_longitudinal_component(self):
        te = [m for m in self.modes if m.family == "TE"][0]
        e = mode_function(te, self.g, 1.1, 2.3)
        assert e[2] == 0

    def test_direction_flips_longitudinal_sign(self):
        tm = [m for m in self.modes if m.family == "TM"][0]
        ep = mode_function(tm, self.g, 1.1, 2.3, direction=+1)
        em = mode_function(tm, self.g, 1.1, 2.3, direction=-1)
        assert np.allclose(ep[:2], -em[:2]) or np.allclose(ep[:2], em[:2])
        # transverse part of TM flips with direction, longitudinal does not
        assert np.allclose(ep[2], em[2])
        assert np.allclose(ep[:2], -em[:2])


class TestSectorArrays:
    def test_branch_and_order(self):
        sec = sector_arrays(WaveguideGeometry(3.0, 6.3), kappa_cap=4.0)
        assert np.all(sec["kz"].imag >= 0)
        # radiating sectors come first (sorted by Im kz, then m, n)
        imag = sec["kz"].imag
        first_evanescent = np.argmax(imag > 0)
        assert np.all(imag[:first_evanescent] == 0)

    def test_cap_respected(self):
        g = WaveguideGeometry(3.0, 6.3)
        sec = sector_arrays(g, kappa_cap=2.0)
        kappa2 = sec["kc2"] - 1.0
        assert np.all(kappa2 <= 4.0 + 1e-12)

    def test_prefactor_neumann(self):
        g = WaveguideGeometry(3.0, 6.0)
        sec = sector_arrays(g, kappa_cap=1.0)
        # (0,1) sector present with weight 4 pi eps_m eps_n / (a b)
        i = np.flatnonzero((sec["m"] == 0) & (sec["n"] == 1))[0]
        assert np.isclose(sec["pref"][i], 4.0 * np.pi * 1 * 2 / 18.0)


class TestModeSumContract:
    def test_outer_product_matches_sector_table(self):
        """The (m, n) sector table must equal sum of TE+TM outer products.

        Dual route: mode_function enumerates physical TE/TM fields with
        their polarization vectors; the sector table stores the same
        data reduced over families.  Summing E(+)_i E(-)_j / (2 i kz)
        over the radiating modes must reproduce the far-field
        propagator assembled from the table.
        """
        g = WaveguideGeometry(3.0, 6.9)  # three radiating modes
        r = np.array([1.1, 2.0, 7.0])
        rp = np.array([1.7, 4.1, 0.0])
        dz = r[2] - rp[2]

        total = np.zeros((3, 3), dtype=complex)
        for mode in radiating(g):
            e_plus = mode_function(mode, g, r[0], r[1], direction=+1)
            e_minus = mode_function(mode, g, rp[0], rp[1], direction=-1)
            amp = 1j * np.exp(1j * mode.kz * dz) / (2.0 * mode.kz)
            total += amp * np.outer(e_plus, e_minus)

        from wgqed.greens import green_tensor

        # a zero evanescent budget keeps only the radiating sectors
        policy = TruncationPolicy(kappa_z_product=1e-9, z_switch=0.5)
        table = green_tensor(r, rp, g, truncation=policy)
        assert np.allclose(total, table, atol=1e-12)
