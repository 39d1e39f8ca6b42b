"""Dyadic field propagator of the guide and the effective atom matrix.

The central object is the classical dyadic D(r, r') relating a point
dipole at r' to the electric field at r inside the perfectly conducting
rectangular guide.  Two exact representations of the same tensor are
kept side by side:

* a sum over guided modes, converging like exp(-kappa |dz|) and used
  whenever the axial separation dz is not small;
* a screened (Ewald-type) split into a Gaussian-filtered mode sum plus
  a rapidly convergent lattice of mirror images, used for small dz and
  for the self term at coincidence, where the plain mode sum would need
  thousands of terms or fails to converge entirely.

The two agree to machine precision in their overlap band, which is one
of the standing verification checks of the package.

From pairwise dyadics the module assembles the non-Hermitian matrix M
generating the linear amplitude dynamics db/dt = M b of N atoms with a
J=0 ground state and J=1 excited triplet, in units gamma0 = 1, k0 = 1:

    M = -(gamma0/2) I + i (gamma0/2) W,
    W_{im,jm'} = (3 / (2 k0^3)) e_m^* . D(r_i, r_j) . e_m'   (i != j),

with e_m the spherical unit vectors.  Diagonal blocks carry the
guide-induced correction D(r, r) - D_free(r, r), which is finite; the
divergent free-space real part is absorbed into the transition
frequency and the free-space imaginary part is the -gamma0/2 above.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import wofz

from .errors import ConvergenceError, DomainError
from .waveguide import TruncationPolicy, WaveguideGeometry, sector_arrays

# Screening width and real-lattice radius of the screened representation.
# eta = 1 balances the two halves; images beyond radius 7 are suppressed
# by erfc(7) ~ 4e-23, and the spectral half is cut where the Gaussian
# filter exp(-(kappa/2 eta)^2) drops below double precision.
EWALD_ETA = 1.0
EWALD_RMAX = 7.0
_SPECTRAL_CAP_FACTOR = 12.4

# Positions closer than this to a side wall make the image lattice
# nearly singular; the self term refuses them.
WALL_MARGIN = 1e-6

# Columns are the spherical unit vectors e_{-1}, e_0, e_{+1} in the
# Cartesian frame: e_{+1} = -(x + iy)/sqrt(2), e_{-1} = (x - iy)/sqrt(2),
# e_0 = z.  Unitary, so U^dagger D U re-expresses a dyadic block with
# the left index conjugated, exactly the combination e_m^* . D . e_m'.
SPHERICAL_BASIS = np.array(
    [
        [1.0 / math.sqrt(2.0), 0.0, -1.0 / math.sqrt(2.0)],
        [-1.0j / math.sqrt(2.0), 0.0, -1.0j / math.sqrt(2.0)],
        [0.0, 1.0, 0.0],
    ],
    dtype=complex,
)


def amplitude_index(atom_index: int, m_j: int) -> int:
    """Flat index of sublevel m_j of one atom in the 3N amplitude vector."""
    if m_j not in (-1, 0, 1):
        raise ValueError("m_j must be -1, 0 or +1")
    return 3 * atom_index + m_j + 1


def free_space_green(rvec, k0: float = 1.0) -> np.ndarray:
    """Dyadic propagator of unbounded vacuum at separation rvec."""
    rvec = np.asarray(rvec, dtype=float)
    r = float(np.linalg.norm(rvec))
    if r == 0.0:
        raise DomainError("free-space dyadic diverges at zero separation")
    rh = rvec / r
    rr = np.outer(rh, rh)
    eye = np.eye(3)
    k = k0
    return np.exp(1j * k * r) * (
        (k * k / r) * (eye - rr) + (1.0 / r**3 - 1j * k / r**2) * (3.0 * rr - eye)
    )


# ---------------------------------------------------------------------------
# Screened representation


def _cerfc(z):
    """erfc for complex argument via the Faddeeva function.

    wofz is accurate in the upper half plane of its argument; the lower
    half is reached through erfc(z) = 2 - erfc(-z).
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    out = np.empty_like(z)
    up = (1j * z).imag >= 0
    out[up] = np.exp(-z[up] ** 2) * wofz(1j * z[up])
    zl = z[~up]
    out[~up] = 2.0 - np.exp(-zl**2) * wofz(-1j * zl)
    return out


def _h_long(kz, u, eta):
    """Gaussian-filtered axial propagator of one transverse sector.

    Equals (1/2 pi) int dq exp(iqu) exp(-(q^2 - kz^2)/(4 eta^2)) /
    (q^2 - kz^2), the long-range half of i exp(i kz |u|) / (2 kz).  The
    filtered integral changes form when the saddle path crosses the pole
    at q = kz, which happens for every radiating sector and, for
    evanescent ones with kz = i kappa, once kappa < 2 eta^2 u.
    """
    kz = np.asarray(kz, dtype=complex)
    u = abs(u)
    p = eta * u + 1j * kz / (2.0 * eta)
    q = eta * u - 1j * kz / (2.0 * eta)
    crossed = np.where(kz.imag > 0, kz.imag < 2.0 * eta * eta * u, True)
    h_cross = (1j / (2.0 * kz)) * np.exp(1j * kz * u) - (1j / (4.0 * kz)) * (
        np.exp(1j * kz * u) * _cerfc(p) - np.exp(-1j * kz * u) * _cerfc(q)
    )
    h_non = (1j / (4.0 * kz)) * (
        np.exp(1j * kz * u) * _cerfc(-p) + np.exp(-1j * kz * u) * _cerfc(q)
    )
    return np.where(crossed, h_cross, h_non)


def _hp_long(kz, u, eta):
    """Derivative of _h_long with respect to u, evaluated at |u|."""
    kz = np.asarray(kz, dtype=complex)
    u = abs(u)
    p = eta * u + 1j * kz / (2.0 * eta)
    q = eta * u - 1j * kz / (2.0 * eta)
    crossed = np.where(kz.imag > 0, kz.imag < 2.0 * eta * eta * u, True)
    d_cross = -0.5 * np.exp(1j * kz * u) + 0.25 * (
        np.exp(1j * kz * u) * _cerfc(p) + np.exp(-1j * kz * u) * _cerfc(q)
    )
    d_non = -0.25 * (np.exp(1j * kz * u) * _cerfc(-p) - np.exp(-1j * kz * u) * _cerfc(q))
    return np.where(crossed, d_cross, d_non)


def _g_short(r, eta, k=1.0):
    """Short-range scalar propagator and its first two radial derivatives.

    g(R) = (1/2R) [exp(ikR) erfc(eta R + ik/2eta)
                   + exp(-ikR) erfc(eta R - ik/2eta)]

    is exp(ikR)/R minus its Gaussian-filtered long-range half; it decays
    like exp(-eta^2 R^2), which is what makes the image lattice converge.
    """
    ap = eta * r + 1j * k / (2.0 * eta)
    am = eta * r - 1j * k / (2.0 * eta)
    ep = np.exp(1j * k * r) * _cerfc(ap)
    em = np.exp(-1j * k * r) * _cerfc(am)
    # exp(+-ikR) exp(-a_pm^2) collapse to the same real Gaussian.
    gauss = (2.0 * eta / math.sqrt(math.pi)) * np.exp(k * k / (4.0 * eta * eta) - eta * eta * r * r)
    fp = 1j * k * ep - gauss
    fm = -1j * k * em - gauss
    gp_ = 1j * k * fp + 2.0 * eta * eta * r * gauss
    gm_ = -1j * k * fm + 2.0 * eta * eta * r * gauss
    g = (ep + em) / (2.0 * r)
    gp = (fp + fm) / (2.0 * r) - (ep + em) / (2.0 * r * r)
    gpp = (gp_ + gm_) / (2.0 * r) - (fp + fm) / (r * r) + (ep + em) / r**3
    return g, gp, gpp


def _g_long0_diag(eta, k=1.0) -> complex:
    """Coincidence limit of the dyadic of the long-range scalar half.

    The long-range half of exp(ikR)/R is analytic at R = 0; applying the
    dyadic operator k^2 I + grad grad to its Taylor expansion gives
    (k^2 G0 + 2 G2) I with the closed forms below.
    """
    y = k / (2.0 * eta)
    e0 = complex(_cerfc(-1j * y)[0])
    c = (2.0 * eta / math.sqrt(math.pi)) * math.exp(y * y)
    g0 = c + 1j * k * e0
    g2 = (
        -math.exp(y * y) * (2.0 * eta**3 + k * k * eta) / (3.0 * math.sqrt(math.pi))
        - 1j * k**3 * e0 / 6.0
    )
    return k * k * g0 + 2.0 * g2


@lru_cache(maxsize=256)
def _image_array(xp: float, yp: float, a: float, b: float, rcut: float):
    """Mirror images of a source at (xp, yp) within transverse radius rcut.

    The conducting walls replicate the source over the lattice
    (s_x xp + 2 mu a, s_y yp + 2 nu b) with sign flips s_x, s_y = +-1.
    Each image dipole is the original with components scaled by the
    diagonal map diag(s_y, s_x, s_x s_y): reflection at an x = const
    wall flips (y, z), at a y = const wall flips (x, z).
    """
    xi, yi, sgn, direct = [], [], [], []
    mu_lo = int(math.floor(-rcut / (2.0 * a))) - 1
    mu_hi = int(math.ceil((rcut + a) / (2.0 * a))) + 1
    nu_lo = int(math.floor(-rcut / (2.0 * b))) - 1
    nu_hi = int(math.ceil((rcut + b) / (2.0 * b))) + 1
    for mu in range(mu_lo, mu_hi + 1):
        for nu in range(nu_lo, nu_hi + 1):
            for sx in (1, -1):
                for sy in (1, -1):
                    xi.append(sx * xp + 2.0 * mu * a)
                    yi.append(sy * yp + 2.0 * nu * b)
                    sgn.append([float(sy), float(sx), float(sx * sy)])
                    direct.append(mu == 0 and nu == 0 and sx == 1 and sy == 1)
    return (
        np.array(xi),
        np.array(yi),
        np.array(sgn),
        np.array(direct, dtype=bool),
    )


@lru_cache(maxsize=256)
def _cached_sectors(a: float, b: float, kappa_cap: float, max_index: int | None):
    # Shared read-only tables; callers must not mutate the arrays.
    return sector_arrays(WaveguideGeometry(a, b), 1.0, kappa_cap, max_index)


def _ewald_pair(
    r,
    rp,
    geometry: WaveguideGeometry,
    self_point: bool = False,
    eta: float = EWALD_ETA,
    rmax: float = EWALD_RMAX,
) -> np.ndarray:
    """Guide dyadic via the screened split, valid at any separation.

    With ``self_point`` the direct image is omitted and the coincidence
    limit of the long-range scalar dyadic subtracted, which returns the
    finite difference D(r, r) - D_free(r, r).
    """
    a, b = geometry.a, geometry.b
    sec = _cached_sectors(a, b, _SPECTRAL_CAP_FACTOR * eta, None)
    kx, ky = sec["kx"], sec["ky"]
    kc2, kz, pref = sec["kc2"], sec["kz"], sec["pref"]

    x, y, z = r
    xp, yp, zp = rp
    u = z - zp
    h = _h_long(kz, u, eta)
    hp_u = np.sign(u) * _hp_long(kz, u, eta) if u != 0.0 else np.zeros_like(kz)
    # The zz entry carries the delta-function part of the filtered
    # propagator, smeared into a Gaussian of width 1/eta.
    gauss_d = (eta / math.sqrt(math.pi)) * np.exp(kz * kz / (4.0 * eta * eta)) * math.exp(
        -eta * eta * u * u
    )
    cx, sx = np.cos(kx * x), np.sin(kx * x)
    cy, sy = np.cos(ky * y), np.sin(ky * y)
    cxp, sxp = np.cos(kx * xp), np.sin(kx * xp)
    cyp, syp = np.cos(ky * yp), np.sin(ky * yp)

    d = np.empty((3, 3), dtype=complex)
    d[0, 0] = np.sum(pref * (1.0 - kx * kx) * cx * sy * cxp * syp * h)
    d[1, 1] = np.sum(pref * (1.0 - ky * ky) * sx * cy * sxp * cyp * h)
    d[2, 2] = np.sum(pref * sx * sy * sxp * syp * (kc2 * h - gauss_d))
    d[0, 1] = np.sum(-pref * kx * ky * cx * sy * sxp * cyp * h)
    d[1, 0] = np.sum(-pref * kx * ky * sx * cy * cxp * syp * h)
    d[0, 2] = np.sum(pref * kx * cx * sy * sxp * syp * hp_u)
    d[2, 0] = np.sum(-pref * kx * sx * sy * cxp * syp * hp_u)
    d[1, 2] = np.sum(pref * ky * sx * cy * sxp * syp * hp_u)
    d[2, 1] = np.sum(-pref * ky * sx * sy * sxp * cyp * hp_u)

    xi, yi, sgn, direct = _image_array(xp, yp, a, b, rmax + 1.0)
    dx = x - xi
    dy = y - yi
    rr2 = dx * dx + dy * dy + u * u
    keep = rr2 <= rmax * rmax
    if self_point:
        keep &= ~direct
    elif np.any(direct & (rr2 < 1e-24)):
        raise DomainError("coincident points: use self_term for the r -> r' limit")
    dx, dy, sgn = dx[keep], dy[keep], sgn[keep]
    rr = np.sqrt(rr2[keep])
    if rr.size:
        g, gp, gpp = _g_short(rr, eta)
        rvec = np.stack([dx, dy, np.full_like(dx, u)], axis=1) / rr[:, None]
        proj = rvec[:, :, None] * rvec[:, None, :]
        blocks = (g + gp / rr)[:, None, None] * np.eye(3) + (gpp - gp / rr)[
            :, None, None
        ] * proj
        d += np.sum(blocks * sgn[:, None, :], axis=0)
    if self_point:
        d -= _g_long0_diag(eta) * np.eye(3)
    return d


# ---------------------------------------------------------------------------
# Plain mode sum, vectorized over pairs

# Cap on simultaneously held (pair, sector) cells; keeps peak memory of
# the block assembly under about a hundred MB.
_CHUNK_CELLS = 500_000

# A truncation counts as insufficient when the first dropped mode is
# suppressed by less than exp(-13.8) ~ 1e-6, the representation
# agreement tolerance; only enforced when the policy asks for more.
_MIN_TAIL_EXPONENT = 13.8


def _sector_entries(sec, ri, rj) -> np.ndarray:
    """Mode-sum dyadic blocks D(ri[p], rj[p]) for a batch of pairs."""
    kx, ky = sec["kx"][None, :], sec["ky"][None, :]
    kc2, kz, pref = sec["kc2"][None, :], sec["kz"][None, :], sec["pref"][None, :]
    u = ri[:, 2] - rj[:, 2]
    au, sg = np.abs(u)[:, None], np.sign(u)[:, None]

    phase = np.exp(1j * kz * au)
    h = 1j * phase / (2.0 * kz)
    hp = -sg * phase / 2.0
    cx, sx = np.cos(kx * ri[:, :1]), np.sin(kx * ri[:, :1])
    cy, sy = np.cos(ky * ri[:, 1:2]), np.sin(ky * ri[:, 1:2])
    cxp, sxp = np.cos(kx * rj[:, :1]), np.sin(kx * rj[:, :1])
    cyp, syp = np.cos(ky * rj[:, 1:2]), np.sin(ky * rj[:, 1:2])

    d = np.empty((ri.shape[0], 3, 3), dtype=complex)
    d[:, 0, 0] = np.sum(pref * (1.0 - kx * kx) * cx * sy * cxp * syp * h, axis=1)
    d[:, 1, 1] = np.sum(pref * (1.0 - ky * ky) * sx * cy * sxp * cyp * h, axis=1)
    d[:, 2, 2] = np.sum(pref * kc2 * sx * sy * sxp * syp * h, axis=1)
    d[:, 0, 1] = np.sum(-pref * kx * ky * cx * sy * sxp * cyp * h, axis=1)
    d[:, 1, 0] = np.sum(-pref * kx * ky * sx * cy * cxp * syp * h, axis=1)
    d[:, 0, 2] = np.sum(pref * kx * cx * sy * sxp * syp * hp, axis=1)
    d[:, 2, 0] = np.sum(-pref * kx * sx * sy * cxp * syp * hp, axis=1)
    d[:, 1, 2] = np.sum(pref * ky * sx * cy * sxp * syp * hp, axis=1)
    d[:, 2, 1] = np.sum(-pref * ky * sx * sy * sxp * cyp * hp, axis=1)
    return d


def _mode_far_blocks(ri, rj, geometry, truncation: TruncationPolicy) -> np.ndarray:
    """Mode-sum blocks for pairs with |dz| >= z_switch, bucketed by |dz|.

    Pairs are grouped into octaves of axial separation; each octave uses
    the sector table cut at the cap of its closest member, so every pair
    keeps at least the sectors its own cap demands.  Quantized caps keep
    the sector-table cache small and hot.
    """
    ri = np.atleast_2d(ri)
    rj = np.atleast_2d(rj)
    adz = np.abs(ri[:, 2] - rj[:, 2])
    if np.any(adz < truncation.z_switch):
        raise ValueError("mode path called below z_switch")
    octave = np.floor(np.log2(adz / truncation.z_switch)).astype(int)
    out = np.empty((ri.shape[0], 3, 3), dtype=complex)
    for ov in np.unique(octave):
        dz_floor = truncation.z_switch * 2.0**ov
        cap = truncation.kappa_cap(dz_floor)
        sec = _cached_sectors(geometry.a, geometry.b, cap, truncation.max_index)
        reach = cap
        if sec["kx"].size == truncation.max_index:
            reach = min(cap, float(sec["kz"].imag.max()))
        if truncation.kappa_z_product > _MIN_TAIL_EXPONENT and reach * dz_floor < _MIN_TAIL_EXPONENT:
            raise ConvergenceError(
                f"retained evanescent reach kappa={reach:.3g} suppresses the first "
                f"dropped mode only to exp(-{reach * dz_floor:.3g}) at separation "
                f"{dz_floor:.3g}; raise kappa_max or max_index"
            )
        idx = np.nonzero(octave == ov)[0]
        step = max(1, _CHUNK_CELLS // max(sec["kx"].size, 1))
        for lo in range(0, idx.size, step):
            sel = idx[lo : lo + step]
            out[sel] = _sector_entries(sec, ri[sel], rj[sel])
    return out


# ---------------------------------------------------------------------------
# Public dyadic interface


def green_tensor(
    r,
    rp,
    geometry: WaveguideGeometry,
    k0: float = 1.0,
    truncation: TruncationPolicy | None = None,
) -> np.ndarray:
    """Dyadic propagator D(r, r') of the guide at distinct points.

    Dispatches between the plain mode sum (axial separation at least
    ``truncation.z_switch`` in units of 1/k0) and the screened
    representation (closer pairs, any transverse offset).  Scales as
    k0^3 times a function of k0 r only, which is how an explicit k0 is
    supported.
    """
    if truncation is None:
        truncation = TruncationPolicy()
    r = np.asarray(r, dtype=float) * k0
    rp = np.asarray(rp, dtype=float) * k0
    geom = WaveguideGeometry(geometry.a * k0, geometry.b * k0)
    _require_inside(r, geom, closed=True)
    _require_inside(rp, geom, closed=True)
    if abs(r[2] - rp[2]) >= truncation.z_switch:
        d = _mode_far_blocks(r[None, :], rp[None, :], geom, truncation)[0]
    else:
        d = _ewald_pair(r, rp, geom)
    return k0**3 * d


def self_term(position, geometry: WaveguideGeometry, k0: float = 1.0) -> np.ndarray:
    """Finite guide-induced part of the dyadic at coincidence.

    Returns D(r, r) - D_free(r, r), whose imaginary part carries only
    the radiating-mode contribution minus the free-space rate and whose
    real part is the position-dependent line shift.  Positions closer
    than 1e-6 (units of 1/k0) to a side wall are rejected: the nearest
    image sits at distance below 2e-6 and the result would be dominated
    by an unresolved near-singular cancellation.
    """
    r = np.asarray(position, dtype=float) * k0
    geom = WaveguideGeometry(geometry.a * k0, geometry.b * k0)
    _require_inside(r, geom, closed=False)
    margin = min(r[0], geom.a - r[0], r[1], geom.b - r[1])
    if margin < WALL_MARGIN:
        raise DomainError(
            f"position {margin:.2e}/k0 from a wall; the coincidence limit "
            f"requires a clearance of {WALL_MARGIN:.0e}/k0"
        )
    return k0**3 * _ewald_pair(r, r, geom, self_point=True)


def radiating_green(
    r,
    rp,
    geometry: WaveguideGeometry,
    k0: float = 1.0,
    truncation: TruncationPolicy | None = None,
) -> np.ndarray:
    """Dyadic propagator restricted to radiating modes.

    Finite even at coincidence (finitely many traveling modes), and the
    imaginary part of the full tensor at coincidence equals this one's:
    evanescent terms are purely real there.  Used by evanescent-off
    builds and as the closed-form cross-check for single-mode guides.
    """
    if truncation is None:
        truncation = TruncationPolicy()
    r = np.asarray(r, dtype=float) * k0
    rp = np.asarray(rp, dtype=float) * k0
    geom = WaveguideGeometry(geometry.a * k0, geometry.b * k0)
    _require_inside(r, geom, closed=True)
    _require_inside(rp, geom, closed=True)
    sec = _cached_sectors(geom.a, geom.b, 0.0, truncation.max_index)
    return k0**3 * _sector_entries(sec, r[None, :], rp[None, :])[0]


def _require_inside(r, geom: WaveguideGeometry, closed: bool) -> None:
    x, y = r[0], r[1]
    ok = (0.0 <= x <= geom.a and 0.0 <= y <= geom.b) if closed else (
        0.0 < x < geom.a and 0.0 < y < geom.b
    )
    if not ok:
        raise DomainError(
            f"transverse point ({x}, {y}) outside the cross-section "
            f"[0, {geom.a}] x [0, {geom.b}]"
        )


# ---------------------------------------------------------------------------
# Ensemble and effective evolution matrix


@dataclass(frozen=True)
class AtomEnsemble:
    """Fixed positions of N atoms inside the guide.

    Positions are (N, 3) in units of 1/k0; x and y must be strictly
    inside the cross-section, z is unbounded.
    """

    positions: np.ndarray
    geometry: WaveguideGeometry

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.size == 0:
            pos = pos.reshape(0, 3)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must have shape (N, 3), got {pos.shape}")
        if np.any(pos[:, 0] <= 0.0) or np.any(pos[:, 0] >= self.geometry.a):
            raise ValueError("atom x outside the open interval (0, a)")
        if np.any(pos[:, 1] <= 0.0) or np.any(pos[:, 1] >= self.geometry.b):
            raise ValueError("atom y outside the open interval (0, b)")
        if pos.shape[0] > 1 and np.unique(pos, axis=0).shape[0] != pos.shape[0]:
            raise ValueError("atom positions must be pairwise distinct")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class EffectiveHamiltonian:
    """Generator of the amplitude dynamics db/dt = matrix @ b.

    ``matrix`` is 3N x 3N over (atom, sublevel) with flat index
    3*atom + m_j + 1, in units gamma0 = 1.  ``basis`` records whether
    sublevels are the spherical triplet m_j = -1, 0, +1 (default) or the
    Cartesian dipole components x, y, z.
    """

    matrix: np.ndarray
    ensemble: AtomEnsemble
    k0: float
    basis: str
    evanescent_flag: bool
    truncation: TruncationPolicy = field(default_factory=TruncationPolicy)

    @property
    def n_atoms(self) -> int:
        return self.ensemble.n_atoms

    def reemission_matrix(self) -> np.ndarray:
        """Dimensionless coupling W with M = -(1/2) I + (i/2) W.

        Eigenvalues Lambda of W give the collective frequency shifts
        (Re Lambda, units gamma0/2 per unit) and decay rates
        gamma0 (1 + Im Lambda).
        """
        n = self.matrix.shape[0]
        return -2j * (self.matrix + 0.5 * np.eye(n))


def build_effective_hamiltonian(
    ensemble: AtomEnsemble,
    k0: float = 1.0,
    evanescent_flag: bool = True,
    truncation: TruncationPolicy | None = None,
    basis: str = "spherical",
) -> EffectiveHamiltonian:
    """Assemble the 3N x 3N evolution matrix for an atom ensemble.

    With ``evanescent_flag`` off, every pair coupling and every self
    term is rebuilt from radiating modes alone: W = (3/2k0^3) D_rad - i I,
    i.e. M = (i/2) (3/2k0^3) D_rad with no separate free-space decay,
    because the full decay of a guided atom is exactly the radiating
    sum.  This switch isolates what evanescent modes contribute.
    """
    if basis not in ("spherical", "cartesian"):
        raise ValueError(f"unknown basis {basis!r}")
    if truncation is None:
        truncation = TruncationPolicy()
    pos = ensemble.positions * k0
    geom = WaveguideGeometry(ensemble.geometry.a * k0, ensemble.geometry.b * k0)
    n = ensemble.n_atoms

    blocks = np.zeros((n, n, 3, 3), dtype=complex)
    if evanescent_flag:
        iu, ju = np.triu_indices(n, k=1)
        if iu.size:
            adz = np.abs(pos[iu, 2] - pos[ju, 2])
            near = adz < truncation.z_switch
            for p in np.nonzero(near)[0]:
                blocks[iu[p], ju[p]] = _ewald_pair(pos[iu[p]], pos[ju[p]], geom)
            far = np.nonzero(~near)[0]
            if far.size:
                blocks[iu[far], ju[far]] = _mode_far_blocks(
                    pos[iu[far]], pos[ju[far]], geom, truncation
                )
            # Reciprocity of the propagator: D(r', r) is the transpose.
            blocks[ju, iu] = np.transpose(blocks[iu, ju], (0, 2, 1))
        for i in range(n):
            margin = min(pos[i, 0], geom.a - pos[i, 0], pos[i, 1], geom.b - pos[i, 1])
            if margin < WALL_MARGIN:
                raise DomainError(
                    f"atom {i} sits {margin:.2e}/k0 from a wall, below the "
                    f"{WALL_MARGIN:.0e}/k0 clearance of the self term"
                )
            blocks[i, i] = _ewald_pair(pos[i], pos[i], geom, self_point=True)
        mat = 0.75j * blocks.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)
        mat += np.diag(np.full(3 * n, -0.5 + 0.0j))
    else:
        sec = _cached_sectors(geom.a, geom.b, 0.0, truncation.max_index)
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        flat = _sector_entries(sec, pos[ii.ravel()], pos[jj.ravel()])
        blocks = flat.reshape(n, n, 3, 3)
        mat = 0.75j * blocks.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)

    if basis == "spherical":
        change = np.kron(np.eye(n), SPHERICAL_BASIS)
        mat = change.conj().T @ mat @ change
    return EffectiveHamiltonian(
        matrix=mat,
        ensemble=ensemble,
        k0=k0,
        basis=basis,
        evanescent_flag=evanescent_flag,
        truncation=truncation,
    )
