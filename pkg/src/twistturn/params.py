"""Physical parameters, scattering-length cases, and derived coupling strengths.

All quantities are SI. Interaction strengths follow the contact-potential
form U = 4*pi*hbar^2*a/m; one-dimensional reductions divide by the
transverse area of the (cigar-shaped) trap.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

# CODATA 2018
HBAR = 1.054571817e-34  # J s
ATOMIC_MASS_UNIT = 1.66053906660e-27  # kg
BOHR_RADIUS = 5.29e-11  # m


@dataclass(frozen=True)
class PhysicalParams:
    """Trap and species constants. Immutable; safe to share between workers.

    The longitudinal trap frequency is a configuration default, not a fact
    about any particular apparatus; every result that depends on it should
    be read as qualitative unless the caller sets it explicitly.
    """

    mass: float = 87.0 * ATOMIC_MASS_UNIT  # kg
    transverse_area: float = 1.0e-10  # m^2
    trap_omega_x: float = 2.0 * math.pi * 50.0  # rad/s
    bohr_radius: float = BOHR_RADIUS  # m
    hbar: float = HBAR  # J s

    def __post_init__(self):
        for name in ("mass", "transverse_area", "trap_omega_x", "bohr_radius", "hbar"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"PhysicalParams.{name} must be strictly positive")

    def oscillator_length(self) -> float:
        """Harmonic-oscillator length sqrt(hbar / (m omega_x))."""
        return math.sqrt(self.hbar / (self.mass * self.trap_omega_x))


class CaseLabel(enum.Enum):
    CASE_I = "I"
    CASE_II = "II"
    CASE_III = "III"
    CUSTOM = "custom"


@dataclass(frozen=True)
class ScatteringCase:
    """s-wave scattering lengths (m) for the aa, bb and ab channels."""

    a_aa: float
    a_bb: float
    a_ab: float
    label: CaseLabel = CaseLabel.CUSTOM

    def __post_init__(self):
        for name in ("a_aa", "a_bb", "a_ab"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"ScatteringCase.{name} must be strictly positive")

    @classmethod
    def case_i(cls, a0: float = BOHR_RADIUS) -> "ScatteringCase":
        """a_aa = a_bb = 100 a0, a_ab = 97 a0: components breathe together."""
        return cls(100.0 * a0, 100.0 * a0, 97.0 * a0, CaseLabel.CASE_I)

    @classmethod
    def case_ii(cls, a0: float = BOHR_RADIUS) -> "ScatteringCase":
        """a_aa = 95, a_bb = 100, a_ab = 90 (in a0): asymmetric, breathe-together split exists."""
        return cls(95.0 * a0, 100.0 * a0, 90.0 * a0, CaseLabel.CASE_II)

    @classmethod
    def case_iii(cls, a0: float = BOHR_RADIUS) -> "ScatteringCase":
        """a_aa = 100, a_bb = 95, a_ab = 97 (in a0): the 87Rb clock states; no breathe-together split."""
        return cls(100.0 * a0, 95.0 * a0, 97.0 * a0, CaseLabel.CASE_III)

    @classmethod
    def from_label(cls, label: str, a0: float = BOHR_RADIUS) -> "ScatteringCase":
        key = label.strip().upper().replace("CASE", "").replace("_", "").replace(" ", "")
        table = {"I": cls.case_i, "II": cls.case_ii, "III": cls.case_iii,
                 "1": cls.case_i, "2": cls.case_ii, "3": cls.case_iii}
        if key not in table:
            raise ValueError(f"unknown scattering case label {label!r}")
        return table[key](a0)


def interaction_strength(a: float, params: PhysicalParams) -> float:
    """Three-dimensional contact interaction strength 4 pi hbar^2 a / m (J m^3)."""
    if not a > 0.0:
        raise ValueError(f"scattering length must be strictly positive, got {a}")
    return 4.0 * math.pi * params.hbar**2 * a / params.mass


def chi_from_modes(u_i: np.ndarray, u_j: np.ndarray, U: float,
                   params: PhysicalParams, dx: float) -> float:
    """Density-overlap nonlinearity rate (rad/s) for a pair of unit-normalized modes.

    Evaluates (U / A_perp) / (2 hbar) * integral |u_i|^2 |u_j|^2 dx with the
    grid's Riemann sum. Both modes must live on the same grid and carry unit
    norm integral(|u|^2 dx) = 1.
    """
    u_i = np.asarray(u_i)
    u_j = np.asarray(u_j)
    if u_i.shape != u_j.shape:
        raise ValueError(f"mode grids mismatch: {u_i.shape} vs {u_j.shape}")
    if not dx > 0.0:
        raise ValueError("grid spacing must be positive")
    for name, u in (("u_i", u_i), ("u_j", u_j)):
        norm = float(np.sum(np.abs(u) ** 2) * dx)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"{name} is not unit-normalized: integral = {norm!r}")
    overlap = float(np.sum(np.abs(u_i) ** 2 * np.abs(u_j) ** 2) * dx)
    u1d = U / params.transverse_area
    return u1d / (2.0 * params.hbar) * overlap


def mode_overlap(u_a: np.ndarray, u_b: np.ndarray, dx: float) -> complex:
    """Complex overlap integral of two unit-normalized modes, |overlap| <= 1."""
    u_a = np.asarray(u_a)
    u_b = np.asarray(u_b)
    if u_a.shape != u_b.shape:
        raise ValueError(f"mode grids mismatch: {u_a.shape} vs {u_b.shape}")
    if not dx > 0.0:
        raise ValueError("grid spacing must be positive")
    for name, u in (("u_a", u_a), ("u_b", u_b)):
        norm = float(np.sum(np.abs(u) ** 2) * dx)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"{name} is not unit-normalized: integral = {norm!r}")
    return complex(np.sum(np.conj(u_a) * u_b) * dx)


def breathe_together_ratio(case: ScatteringCase) -> float | None:
    """Population ratio N_a/N_b that freezes out relative breathing motion.

    Returns (U_bb - U_ab) / (U_aa - U_ab), which is also the ratio of the
    scattering-length differences. None when the ratio is degenerate,
    non-finite, or not strictly positive (no such split exists).
    """
    denom = case.a_aa - case.a_ab
    numer = case.a_bb - case.a_ab
    if denom == 0.0:
        return None
    ratio = numer / denom
    if not math.isfinite(ratio) or ratio <= 0.0:
        return None
    return ratio


@dataclass(frozen=True)
class DerivedCouplings:
    """Interaction strengths and single-mode rates derived from one configuration.

    Computed once at configuration load and frozen; chi_* and eta are NaN
    until a condensate mode is supplied (they require the density profile).
    """

    u_aa: float  # J m^3
    u_bb: float
    u_ab: float
    u1d_aa: float  # J m
    u1d_bb: float
    u1d_ab: float
    chi_aa: float = math.nan  # rad/s
    chi_bb: float = math.nan
    chi_ab: float = math.nan
    chi: float = math.nan  # chi_aa + chi_bb - 2 chi_ab
    chi_minus: float = math.nan  # chi_aa - chi_bb
    eta: complex = complex(math.nan)  # mode overlap
    omega: float = 0.0  # rad/s, Rabi rotation rate

    def __post_init__(self):
        if np.isfinite(self.eta) and abs(self.eta) > 1.0 + 1e-9:
            raise ValueError(f"|eta| must not exceed 1, got {abs(self.eta)}")


def derive_couplings(case: ScatteringCase, params: PhysicalParams,
                     mode_a: np.ndarray | None = None,
                     mode_b: np.ndarray | None = None,
                     dx: float | None = None,
                     omega: float = 0.0) -> DerivedCouplings:
    """Build the frozen coupling bag for a scattering case.

    If `mode_a` is given (a unit-normalized condensate mode), the chi_ij
    overlap rates and eta are evaluated on it; `mode_b` defaults to
    `mode_a` (perfect overlap).
    """
    u_aa = interaction_strength(case.a_aa, params)
    u_bb = interaction_strength(case.a_bb, params)
    u_ab = interaction_strength(case.a_ab, params)
    area = params.transverse_area
    out = DerivedCouplings(
        u_aa=u_aa, u_bb=u_bb, u_ab=u_ab,
        u1d_aa=u_aa / area, u1d_bb=u_bb / area, u1d_ab=u_ab / area,
        omega=omega,
    )
    if mode_a is None:
        return out
    if dx is None:
        raise ValueError("dx is required when modes are supplied")
    if mode_b is None:
        mode_b = mode_a
    chi_aa = chi_from_modes(mode_a, mode_a, u_aa, params, dx)
    chi_bb = chi_from_modes(mode_b, mode_b, u_bb, params, dx)
    chi_ab = chi_from_modes(mode_a, mode_b, u_ab, params, dx)
    eta = mode_overlap(mode_a, mode_b, dx)
    return replace(out,
                   chi_aa=chi_aa, chi_bb=chi_bb, chi_ab=chi_ab,
                   chi=chi_aa + chi_bb - 2.0 * chi_ab,
                   chi_minus=chi_aa - chi_bb,
                   eta=eta)
