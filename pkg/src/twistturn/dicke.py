"""Exact collective-spin dynamics in the (N+1)-dimensional J_z eigenbasis.

The twisting Hamiltonian chi J_z^2 + chi_minus (N-1) J_z + Omega J_x is
real-symmetric tridiagonal in this basis, so propagation goes through a
single eigendecomposition that is reused across output times. This module
is the oracle the stochastic solvers are checked against.

Sign conventions: J_x = (a'b + b'a)/2, J_y = i(a'b - b'a)/2 and
J_z = (a'a - b'b)/2, so that exp(i theta J_y) rotates the top J_z
eigenstate onto +x with all-positive amplitudes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import gammaln

from .observables import SpinMoments

# Above this size the cubic eigendecomposition cost is no longer worth it;
# use the two-mode truncated-Wigner solver instead.
MAX_EXACT_ATOMS = 2000


@dataclass(frozen=True)
class SpinState:
    """Pure state of N spin-1/2 atoms in the symmetric (maximal-J) sector.

    `amplitudes[k]` multiplies the J_z eigenstate with m = k - N/2.
    """

    n_atoms: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ValueError("n_atoms must be at least 1")
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.n_atoms + 1,):
            raise ValueError(
                f"amplitude vector must have length N+1 = {self.n_atoms + 1}")
        norm = float(np.sum(np.abs(amps) ** 2))
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"state norm {norm!r} deviates from 1")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def m_values(self) -> np.ndarray:
        return np.arange(self.n_atoms + 1) - self.n_atoms / 2.0

    def fidelity(self, other: "SpinState") -> float:
        return float(np.abs(np.vdot(self.amplitudes, other.amplitudes)) ** 2)


def css_state(n_atoms: int, theta: float, phi: float) -> SpinState:
    """Spin coherent state exp(i phi J_z) exp(i theta J_y) |J_z = N/2>.

    Binomial amplitudes sqrt(C(N,k)) cos(theta/2)^k sin(theta/2)^(N-k)
    with k = m + N/2, evaluated in log space so that large N stays finite.
    """
    if n_atoms < 1:
        raise ValueError("n_atoms must be at least 1")
    if not 0.0 <= theta <= math.pi:
        raise ValueError(f"theta must lie in [0, pi], got {theta}")
    n = n_atoms
    k = np.arange(n + 1)
    m = k - n / 2.0
    c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
    if s == 0.0 or c == 0.0:  # poles: a single J_z eigenstate
        amps = np.zeros(n + 1, dtype=complex)
        idx = n if s == 0.0 else 0
        amps[idx] = np.exp(1j * phi * m[idx])
        return SpinState(n_atoms, amps)
    log_binom = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    log_amp = 0.5 * log_binom + k * math.log(c) + (n - k) * math.log(s)
    amps = np.exp(log_amp + 1j * phi * m)
    amps /= math.sqrt(float(np.sum(np.abs(amps) ** 2)))
    return SpinState(n_atoms, amps)


@dataclass
class SingleModeHamiltonian:
    """chi J_z^2 + chi_minus (N-1) J_z + Omega J_x, stored as angular frequencies.

    `diagonal` and `offdiagonal` are H/hbar in rad/s; constant terms that
    depend only on total atom number are dropped (pure global phase).
    The eigendecomposition is computed lazily and cached for reuse.
    """

    chi: float
    chi_minus: float
    omega: float
    n_atoms: int
    diagonal: np.ndarray = field(repr=False)
    offdiagonal: np.ndarray = field(repr=False)
    _eig: tuple | None = field(default=None, repr=False, compare=False)

    def dense_matrix(self, hbar: float = 1.0) -> np.ndarray:
        h = np.diag(self.diagonal.astype(complex))
        idx = np.arange(self.n_atoms)
        h[idx, idx + 1] = self.offdiagonal
        h[idx + 1, idx] = self.offdiagonal
        return hbar * h

    def eigensystem(self):
        if self._eig is None:
            if np.any(self.offdiagonal != 0.0):
                w, v = eigh_tridiagonal(self.diagonal, self.offdiagonal)
            else:
                w, v = self.diagonal.copy(), np.eye(self.n_atoms + 1)
            self._eig = (w, v)
        return self._eig


def build_hamiltonian(chi: float, chi_minus: float, omega: float,
                      n_atoms: int) -> SingleModeHamiltonian:
    """Assemble the tridiagonal twisting Hamiltonian for N atoms.

    Diagonal: chi m^2 + chi_minus (N-1) m. Off-diagonal: Omega times the
    J_x ladder element <m+1|J_x|m> = sqrt((J-m)(J+m+1))/2 with J = N/2.
    """
    if n_atoms < 1:
        raise ValueError("n_atoms must be at least 1")
    j = n_atoms / 2.0
    m = np.arange(n_atoms + 1) - j
    diagonal = chi * m**2 + chi_minus * (n_atoms - 1) * m
    m_low = m[:-1]
    offdiagonal = omega * 0.5 * np.sqrt((j - m_low) * (j + m_low + 1.0))
    return SingleModeHamiltonian(chi=chi, chi_minus=chi_minus, omega=omega,
                                 n_atoms=n_atoms, diagonal=diagonal,
                                 offdiagonal=offdiagonal)


def evolve(state: SpinState, hamiltonian: SingleModeHamiltonian,
           t: float) -> SpinState:
    """Propagate exp(-i H t / hbar)|state> through the cached eigenbasis."""
    return evolve_series(state, hamiltonian, [t])[0]


def evolve_series(state: SpinState, hamiltonian: SingleModeHamiltonian,
                  times) -> list[SpinState]:
    """Propagate to several times at the cost of one eigendecomposition."""
    if state.n_atoms != hamiltonian.n_atoms:
        raise ValueError("state and Hamiltonian atom numbers differ")
    if state.n_atoms > MAX_EXACT_ATOMS:
        raise ValueError(
            f"exact propagation is limited to N <= {MAX_EXACT_ATOMS}; "
            "use the two-mode truncated-Wigner solver for larger N")
    times = np.asarray(times, dtype=float)
    if not np.all(np.isfinite(times)):
        raise ValueError("evolution times must be finite")
    w, v = hamiltonian.eigensystem()
    coeffs = v.T.conj() @ state.amplitudes if np.iscomplexobj(v) else v.T @ state.amplitudes
    out = []
    for t in times:
        amps = v @ (np.exp(-1j * w * t) * coeffs)
        amps /= math.sqrt(float(np.sum(np.abs(amps) ** 2)))
        out.append(SpinState(state.n_atoms, amps))
    return out


def q_function(state: SpinState, theta_grid, phi_grid) -> np.ndarray:
    """Husimi Q(theta, phi) = |<theta,phi|state>|^2 on the given grids.

    Returns an array of shape (len(theta_grid), len(phi_grid)); every
    entry lies in [0, 1].
    """
    theta_grid = np.atleast_1d(np.asarray(theta_grid, dtype=float))
    phi_grid = np.atleast_1d(np.asarray(phi_grid, dtype=float))
    if theta_grid.size == 0 or phi_grid.size == 0:
        raise ValueError("theta and phi grids must be nonempty")
    n = state.n_atoms
    m = state.m_values
    # rows: real theta amplitudes d_m(theta); columns contracted with the
    # azimuthal phases exp(-i phi m)
    d = np.empty((theta_grid.size, n + 1))
    for i, th in enumerate(theta_grid):
        d[i] = css_state(n, float(th), 0.0).amplitudes.real
    phases = np.exp(-1j * np.outer(phi_grid, m))  # (n_phi, N+1)
    overlap = (d * state.amplitudes[None, :]) @ phases.T
    return np.abs(overlap) ** 2


def _apply_jz(state: SpinState) -> np.ndarray:
    return state.m_values * state.amplitudes


def _apply_jplus(amps: np.ndarray, n: int) -> np.ndarray:
    j = n / 2.0
    m = np.arange(n + 1) - j
    out = np.zeros_like(amps)
    out[1:] = np.sqrt((j - m[:-1]) * (j + m[:-1] + 1.0)) * amps[:-1]
    return out


def _apply_jminus(amps: np.ndarray, n: int) -> np.ndarray:
    j = n / 2.0
    m = np.arange(n + 1) - j
    out = np.zeros_like(amps)
    out[:-1] = np.sqrt((j + m[1:]) * (j - m[1:] + 1.0)) * amps[1:]
    return out


def spin_operator_vectors(state: SpinState):
    """(J_x|psi>, J_y|psi>, J_z|psi>) via the ladder recursions."""
    amps = state.amplitudes
    n = state.n_atoms
    jp = _apply_jplus(amps, n)
    jm = _apply_jminus(amps, n)
    v_x = 0.5 * (jp + jm)
    v_y = 0.5j * (jp - jm)
    v_z = _apply_jz(state)
    return v_x, v_y, v_z


def spin_moments_exact(state: SpinState) -> SpinMoments:
    """Exact first moments and symmetrized covariance of (J_x, J_y, J_z)."""
    vs = spin_operator_vectors(state)
    amps = state.amplitudes
    mean = np.array([float(np.real(np.vdot(amps, v))) for v in vs])
    cov = np.empty((3, 3))
    for i in range(3):
        for j in range(i, 3):
            second = float(np.real(np.vdot(vs[i], vs[j])))
            cov[i, j] = cov[j, i] = second - mean[i] * mean[j]
    return SpinMoments(time=0.0, mean_j=mean, cov_j=cov,
                       n_mean=float(state.n_atoms))


def oat_mean_jx(n_atoms: int, chi: float, t) -> np.ndarray:
    """Closed-form <J_x(t)> = (N/2) cos^(N-1)(chi t) for twisting from +x."""
    t = np.asarray(t, dtype=float)
    return n_atoms / 2.0 * np.cos(chi * t) ** (n_atoms - 1)
