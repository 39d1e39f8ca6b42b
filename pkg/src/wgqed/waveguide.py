"""Mode structure of a rectangular perfectly conducting waveguide.

The guide occupies 0 < x < a, 0 < y < b and is translationally invariant
along z.  All lengths are expressed in units of 1/k0 and wavenumbers in
units of k0, where k0 is the transition wavenumber of the atoms placed
inside; helper functions accept an explicit ``k0`` so dimensionful
callers can opt out of that convention.

Modes come in two families.  TE modes (no longitudinal E field) exist
for integer index pairs (m, n) with m + n >= 1; TM modes (no
longitudinal B field) require m >= 1 and n >= 1.  Both propagate with

    kz = sqrt(k0**2 - kc**2),    kc**2 = (pi*m/a)**2 + (pi*n/b)**2,

real for radiating modes (kc <= k0) and purely imaginary, kz = i*kappa,
for evanescent ones.  The branch with Im kz >= 0 is always taken so that
exp(i*kz*|z|) decays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WaveguideGeometry:
    """Rectangular cross-section, side a along x and b along y."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"waveguide sides must be positive, got a={self.a}, b={self.b}")

    @property
    def cross_section_area(self) -> float:
        return self.a * self.b


@dataclass(frozen=True)
class TruncationPolicy:
    """How far into the evanescent spectrum sums over modes are carried.

    A mode with decay constant kappa contributes a factor
    exp(-kappa*|dz|) at axial separation dz, so the sum over modes for a
    given pair is cut at kappa <= kappa_z_product / |dz|.  With the
    default product of 40 the first neglected mode is suppressed by
    exp(-40) ~ 4e-18, below double precision.  ``kappa_max`` optionally
    caps the decay constant regardless of separation, ``max_index`` caps
    the total number of enumerated modes, and pairs closer than
    ``z_switch`` are handed to the screened summation in
    :mod:`wgqed.greens` instead of the raw mode sum.
    """

    kappa_z_product: float = 40.0
    kappa_max: float | None = None
    max_index: int = 2000
    z_switch: float = 0.5

    def __post_init__(self):
        if self.kappa_z_product <= 0:
            raise ValueError("kappa_z_product must be positive")
        if self.kappa_max is not None and self.kappa_max <= 0:
            raise ValueError("kappa_max must be positive when given")
        if self.max_index < 1:
            raise ValueError("max_index must be at least 1")
        if self.z_switch <= 0:
            raise ValueError("z_switch must be positive")

    def kappa_cap(self, dz: float) -> float:
        """Largest evanescent decay constant retained at axial separation dz."""
        dz = max(abs(dz), self.z_switch)
        cap = self.kappa_z_product / dz
        if self.kappa_max is not None:
            cap = min(cap, self.kappa_max)
        return cap


@dataclass(frozen=True)
class Mode:
    """A single guided mode, identified by family and transverse indices.

    ``kz`` is stored complex: real and non-negative for radiating modes,
    purely imaginary with positive imaginary part for evanescent ones.
    """

    family: str  # "TE" or "TM"
    m: int
    n: int
    kz: complex

    def __post_init__(self):
        if self.family not in ("TE", "TM"):
            raise ValueError(f"unknown mode family {self.family!r}")
        if self.family == "TE" and self.m + self.n < 1:
            raise ValueError("TE requires m + n >= 1")
        if self.family == "TM" and (self.m < 1 or self.n < 1):
            raise ValueError("TM requires m >= 1 and n >= 1")

    @property
    def is_radiating(self) -> bool:
        return self.kz.imag == 0.0

    @property
    def kappa(self) -> float:
        """Evanescent decay constant, zero for radiating modes."""
        return self.kz.imag


def transverse_wavenumbers(mode: Mode, geometry: WaveguideGeometry) -> tuple[float, float]:
    return math.pi * mode.m / geometry.a, math.pi * mode.n / geometry.b


def classify_modes(
    geometry: WaveguideGeometry,
    k0: float = 1.0,
    truncation: TruncationPolicy | None = None,
) -> list[Mode]:
    """Enumerate guided modes up to the truncation cap.

    Returns every TE and TM mode whose decay constant does not exceed
    ``truncation.kappa_cap(z_switch)``, sorted by decay constant (all
    radiating modes first), then family, then (m, n).  The list is
    clipped to ``truncation.max_index`` entries after sorting, so the
    modes dropped are always the most strongly evanescent ones.
    """
    if truncation is None:
        truncation = TruncationPolicy()
    cap = truncation.kappa_cap(truncation.z_switch)
    kc2_max = k0 * k0 + cap * cap

    a, b = geometry.a, geometry.b
    modes = []
    m_max = int(math.floor(math.sqrt(kc2_max) * a / math.pi))
    for m in range(m_max + 1):
        kx2 = (math.pi * m / a) ** 2
        n_max = int(math.floor(math.sqrt(max(kc2_max - kx2, 0.0)) * b / math.pi))
        for n in range(n_max + 1):
            kc2 = kx2 + (math.pi * n / b) ** 2
            if kc2 > kc2_max:
                continue
            kz = _branch_kz(k0, kc2)
            if m + n >= 1:
                modes.append(Mode("TE", m, n, kz))
            if m >= 1 and n >= 1:
                modes.append(Mode("TM", m, n, kz))

    modes.sort(key=lambda md: (md.kappa, md.family, md.m, md.n))
    return modes[: truncation.max_index]


def _branch_kz(k0: float, kc2: float) -> complex:
    """Axial wavenumber on the decaying branch (Im kz >= 0)."""
    d = k0 * k0 - kc2
    if d >= 0.0:
        return complex(math.sqrt(d), 0.0)
    return complex(0.0, math.sqrt(-d))


def mode_function(
    mode: Mode,
    geometry: WaveguideGeometry,
    x: float,
    y: float,
    direction: int = +1,
) -> np.ndarray:
    """Transverse electric field profile of a guided mode.

    Normalized so that the dyadic field propagator of the guide is the
    plain sum over modes

        D(r, r') = sum_modes (i / (2 kz)) E(+1; x, y) E(-1; x', y')^T
                   * exp(i kz (z - z'))        for z > z',

    with no further weights.  ``direction`` is the sign of propagation
    along z and only matters for TM modes, whose transverse components
    flip sign with it.  Explicitly, with C = sqrt(4 pi eps_m eps_n /
    (a b)) and Neumann factors eps_0 = 1, eps_{>=1} = 2:

        TE: C * (k0 / kc) * ( ky cos(kx x) sin(ky y),
                             -kx sin(kx x) cos(ky y), 0)
        TM: C * ( d i kz kx / kc cos(kx x) sin(ky y),
                  d i kz ky / kc sin(kx x) cos(ky y),
                  kc sin(kx x) sin(ky y))
    """
    if direction not in (+1, -1):
        raise ValueError("direction must be +1 or -1")
    kx, ky = transverse_wavenumbers(mode, geometry)
    kc2 = kx * kx + ky * ky
    kc = math.sqrt(kc2)
    # Recover k0 from the dispersion relation; kz**2 = k0**2 - kc**2.
    k0 = math.sqrt((mode.kz * mode.kz).real + kc2)
    eps_m = 1.0 if mode.m == 0 else 2.0
    eps_n = 1.0 if mode.n == 0 else 2.0
    c = math.sqrt(4.0 * math.pi * eps_m * eps_n / geometry.cross_section_area)

    cx, sx = math.cos(kx * x), math.sin(kx * x)
    cy, sy = math.cos(ky * y), math.sin(ky * y)
    if mode.family == "TE":
        return c * (k0 / kc) * np.array([ky * cx * sy, -kx * sx * cy, 0.0], dtype=complex)
    d = float(direction)
    return c * np.array(
        [
            d * 1j * mode.kz * kx / kc * cx * sy,
            d * 1j * mode.kz * ky / kc * sx * cy,
            kc * sx * sy,
        ],
        dtype=complex,
    )


def sector_arrays(
    geometry: WaveguideGeometry,
    k0: float = 1.0,
    kappa_cap: float = math.inf,
    max_index: int | None = None,
) -> dict[str, np.ndarray]:
    """Vectorized table of transverse sectors for fast dyadic sums.

    A sector is an index pair (m, n) with m + n >= 1; it bundles the TE
    mode and, when both indices are nonzero, the degenerate TM mode.
    Returns 1-D arrays kx, ky, kc2, kz (complex, Im >= 0) and the
    prefactor pref = 4 pi eps_m eps_n / (a b), sorted the same way as
    :func:`classify_modes` sorts (decay constant, then m, then n).
    """
    a, b = geometry.a, geometry.b
    kc2_max = k0 * k0 + kappa_cap * kappa_cap

    m_max = int(math.floor(math.sqrt(kc2_max) * a / math.pi))
    ms = np.arange(m_max + 1)
    n_max = int(math.floor(math.sqrt(kc2_max) * b / math.pi))
    ns = np.arange(n_max + 1)
    mg, ng = np.meshgrid(ms, ns, indexing="ij")
    mg, ng = mg.ravel(), ng.ravel()

    kx = np.pi * mg / a
    ky = np.pi * ng / b
    kc2 = kx * kx + ky * ky
    keep = (mg + ng >= 1) & (kc2 <= kc2_max)
    mg, ng, kx, ky, kc2 = mg[keep], ng[keep], kx[keep], ky[keep], kc2[keep]

    kz = np.sqrt(np.asarray(k0 * k0 - kc2, dtype=complex))
    kz = np.where(kz.imag < 0, -kz, kz)

    eps = np.where(mg == 0, 1.0, 2.0) * np.where(ng == 0, 1.0, 2.0)
    pref = 4.0 * np.pi * eps / (a * b)

    order = np.lexsort((ng, mg, kz.imag))
    out = {
        "m": mg[order],
        "n": ng[order],
        "kx": kx[order],
        "ky": ky[order],
        "kc2": kc2[order],
        "kz": kz[order],
        "pref": pref[order],
    }
    if max_index is not None and out["m"].size > max_index:
        out = {key: val[:max_index] for key, val in out.items()}
    return out
