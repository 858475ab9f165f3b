"""Mean-field layer: 1-d grids, ground states, and two-component evolution.

The propagator is a symmetric split-step scheme with three exactly unitary
factors per step: a spectral kinetic step, a diagonal potential+nonlinear
phase in position space, and a constant 2x2 rotation carrying the Rabi
coupling Omega/2 and the optional J_z compensation omega_r. The same engine
drives both the mean-field equations and (with half-quantum density
subtractions switched on) the multimode truncated-Wigner trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ._kernels import diag_phase, mix_2x2
from .errors import ConvergenceError, StepSizeError
from .params import DerivedCouplings, PhysicalParams

DEFAULT_N_POINTS = 512
DEFAULT_DT = 1e-6  # s
MAX_NYQUIST_PHASE = 0.1  # rad per step at the grid's largest wavenumber


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform periodic grid spanning [-extent, extent) with 2^k points."""

    n_points: int
    extent: float

    def __post_init__(self):
        if self.n_points < 1 or (self.n_points & (self.n_points - 1)) != 0:
            raise ValueError("n_points must be a power of two")
        if not self.extent > 0.0:
            raise ValueError("extent must be positive")

    @property
    def spacing(self) -> float:
        return 2.0 * self.extent / self.n_points

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.n_points) - self.n_points / 2.0) * self.spacing

    @property
    def wavenumbers(self) -> np.ndarray:
        return 2.0 * math.pi * np.fft.fftfreq(self.n_points, d=self.spacing)


@dataclass(frozen=True)
class FieldPair:
    """Two complex fields (units m^-1/2) sharing one grid, at one time."""

    grid: SpatialGrid
    psi_a: np.ndarray
    psi_b: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        for name in ("psi_a", "psi_b"):
            f = np.asarray(getattr(self, name), dtype=complex)
            if f.shape != (self.grid.n_points,):
                raise ValueError(f"{name} does not match the grid")
            if not np.all(np.isfinite(f)):
                raise ValueError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, f)

    def norms(self) -> tuple[float, float]:
        dx = self.grid.spacing
        return (float(np.sum(np.abs(self.psi_a) ** 2) * dx),
                float(np.sum(np.abs(self.psi_b) ** 2) * dx))


@dataclass(frozen=True)
class FieldSeries:
    """Mean-field trajectory recorded at the requested output times."""

    grid: SpatialGrid
    times: np.ndarray
    psi_a: np.ndarray  # (T, M)
    psi_b: np.ndarray  # (T, M)

    def at(self, index: int) -> FieldPair:
        return FieldPair(self.grid, self.psi_a[index], self.psi_b[index],
                         float(self.times[index]))


@dataclass(frozen=True)
class Ham1D:
    """Single-particle pieces of the 1-d Hamiltonian on a grid."""

    kinetic_prefactor: float  # hbar^2 / 2m
    potential: np.ndarray  # J, sampled on the grid


def harmonic_hamiltonian(grid: SpatialGrid, params: PhysicalParams) -> Ham1D:
    v = 0.5 * params.mass * params.trap_omega_x**2 * grid.x**2
    return Ham1D(kinetic_prefactor=params.hbar**2 / (2.0 * params.mass), potential=v)


def thomas_fermi_radius(n_atoms: float, u1d: float, params: PhysicalParams) -> float:
    """Thomas-Fermi half-width of the harmonic-trap ground state."""
    m, w = params.mass, params.trap_omega_x
    mu = (0.75 * n_atoms * u1d * math.sqrt(0.5 * m * w * w)) ** (2.0 / 3.0)
    return math.sqrt(2.0 * mu / (m * w * w))


def default_grid(n_atoms: float, u1d_aa: float, params: PhysicalParams,
                 n_points: int = DEFAULT_N_POINTS) -> SpatialGrid:
    """Grid sized to hold the cloud: at least 4x the Thomas-Fermi radius."""
    r_tf = thomas_fermi_radius(n_atoms, u1d_aa, params)
    extent = max(4.2 * r_tf, 8.0 * params.oscillator_length())
    return SpatialGrid(n_points=n_points, extent=extent)


def default_time_step(grid: SpatialGrid, params: PhysicalParams,
                      dt: float = DEFAULT_DT) -> float:
    """Shrink dt until the kinetic phase per step at Nyquist is <= 0.1 rad."""
    k_max = math.pi / grid.spacing
    rate = params.hbar * k_max**2 / (2.0 * params.mass)
    if rate * dt > MAX_NYQUIST_PHASE:
        dt = MAX_NYQUIST_PHASE / rate
    return dt


def _mix_matrix(omega: float, omega_r: float, tau: float):
    """Constant 2x2 unitary exp(-i tau (omega/2 sigma_x - omega_r/2 sigma_z))."""
    f = 0.5 * omega
    g = -0.5 * omega_r
    r = math.hypot(f, g)
    if r == 0.0:
        return None
    c, s = math.cos(r * tau), math.sin(r * tau)
    u11 = c - 1j * s * g / r
    u12 = -1j * s * f / r
    return u11, u12, np.conj(u11)


def _apply_mix(psi_a, psi_b, mix):
    u11, u12, u22 = mix
    mix_2x2(psi_a, psi_b, complex(u11), complex(u12), complex(u22))


def split_step_evolve(psi_a: np.ndarray, psi_b: np.ndarray, grid: SpatialGrid,
                      params: PhysicalParams, couplings: DerivedCouplings,
                      omega: float, omega_r: float, dt: float, t_grid,
                      subtract_self: float = 0.0, subtract_cross: float = 0.0,
                      t_start: float = 0.0, record=None):
    """Integrate the coupled fields over t_grid; batched over leading axis.

    `psi_a`/`psi_b` may be (M,) or (B, M); the trajectory axis is carried
    through untouched, so results for any row are independent of its batch
    companions. `record(k, psi_a, psi_b)` is called at every output time;
    when it is None the fields at the output times are returned as arrays.

    The density subtractions implement the truncated-Wigner drift: the
    self- and cross-interaction terms use |psi|^2 - subtract/dx. Zero for
    the mean-field equations.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ValueError("t_grid must be a nonempty 1-d array")
    if np.any(np.diff(t_grid) <= 0.0):
        raise ValueError("t_grid must be strictly increasing")
    if t_grid[0] < t_start - 1e-30:
        raise ValueError("t_grid starts before the field time")
    if not dt > 0.0:
        raise ValueError("dt must be positive")

    batched = np.asarray(psi_a).ndim == 2
    psi_a = np.array(np.atleast_2d(psi_a), dtype=np.complex128, order="C")
    psi_b = np.array(np.atleast_2d(psi_b), dtype=np.complex128, order="C")

    hbar = params.hbar
    dx = grid.spacing
    ham = harmonic_hamiltonian(grid, params)
    kin_rate = ham.kinetic_prefactor * grid.wavenumbers**2 / hbar  # rad/s
    c_aa = couplings.u1d_aa / hbar
    c_bb = couplings.u1d_bb / hbar
    c_ab = couplings.u1d_ab / hbar
    # constant diagonal offsets: trap potential minus the subtraction terms
    v_rate = ham.potential / hbar
    off_a = np.ascontiguousarray(
        v_rate - (c_aa * subtract_self + c_ab * subtract_cross) / dx)
    off_b = np.ascontiguousarray(
        v_rate - (c_bb * subtract_self + c_ab * subtract_cross) / dx)

    # guard against grossly unresolved dynamics at the requested step
    rate_scale = float(np.max(np.abs(off_a)) + c_aa * np.max(np.abs(psi_a[0])) ** 2
                       + c_ab * np.max(np.abs(psi_b[0])) ** 2)
    if rate_scale * dt > 2.0 * math.pi:
        raise StepSizeError(
            f"dt = {dt:.3g} s does not resolve the potential/interaction "
            f"phase rate {rate_scale:.3g} rad/s")

    out_a = out_b = None
    if record is None:
        shape = (t_grid.size,) + psi_a.shape
        out_a = np.empty(shape, dtype=complex)
        out_b = np.empty(shape, dtype=complex)

        def record(k, pa, pb):
            out_a[k] = pa
            out_b[k] = pb

    norm0 = float(np.sum(psi_a[0].real**2 + psi_a[0].imag**2
                         + psi_b[0].real**2 + psi_b[0].imag**2))
    total_steps = 0
    t_now = t_start
    for k, t_target in enumerate(t_grid):
        span = t_target - t_now
        if span > 0.0:
            n_sub = max(int(math.ceil(span / dt - 1e-12)), 1)
            h = span / n_sub
            # all factors must use the realized step h, not the requested dt
            kin_full = np.exp(-1j * kin_rate * h)
            mix_h = _mix_matrix(omega, omega_r, 0.5 * h)
            # symmetric factorization B(h/2) C(h/2) A(h) C(h/2) B(h/2),
            # with the interior B and C halves fused between steps
            diag_phase(psi_a, psi_b, off_a, off_b, c_aa, c_ab, c_bb, 0.5 * h)
            if mix_h:
                _apply_mix(psi_a, psi_b, mix_h)
            for i in range(n_sub):
                ft = np.fft.fft(psi_a, axis=-1)
                ft *= kin_full
                psi_a = np.fft.ifft(ft, axis=-1)
                ft = np.fft.fft(psi_b, axis=-1)
                ft *= kin_full
                psi_b = np.fft.ifft(ft, axis=-1)
                if i < n_sub - 1:
                    if mix_h:
                        _apply_mix(psi_a, psi_b, mix_h)
                    diag_phase(psi_a, psi_b, off_a, off_b, c_aa, c_ab, c_bb, h)
                    if mix_h:
                        _apply_mix(psi_a, psi_b, mix_h)
            if mix_h:
                _apply_mix(psi_a, psi_b, mix_h)
            diag_phase(psi_a, psi_b, off_a, off_b, c_aa, c_ab, c_bb, 0.5 * h)
            total_steps += n_sub
            t_now = t_target

            norm1 = float(np.sum(psi_a[0].real**2 + psi_a[0].imag**2
                                 + psi_b[0].real**2 + psi_b[0].imag**2))
            if norm0 > 0 and abs(norm1 - norm0) > 1e-6 * norm0 * max(total_steps, 1):
                raise StepSizeError(
                    f"norm drifted by {abs(norm1 - norm0) / norm0:.3g} after "
                    f"{total_steps} steps; reduce dt")
        record(k, psi_a, psi_b)

    if out_a is not None:
        if not batched:
            out_a = out_a[:, 0, :]
            out_b = out_b[:, 0, :]
        return out_a, out_b
    return None


def ground_state(grid: SpatialGrid, n_atoms: float, u1d_aa: float,
                 params: PhysicalParams, tol: float = 1e-8,
                 max_iter: int = 100_000) -> np.ndarray:
    """Single-component ground state of the trapped 1-d condensate.

    Imaginary-time split stepping with per-step renormalization brings a
    Gaussian seed close to the ground state; a preconditioned
    projected-gradient descent then polishes it (the descent's fixed point
    is the exact discrete ground state, so it has no step-size bias).
    Returns the nonnegative real profile normalized to
    integral |Psi|^2 dx = N. Convergence is declared when the
    chemical-potential residual ||(H + U|Psi|^2 - mu)Psi|| / ||mu Psi||
    drops below tol.
    """
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    hbar = params.hbar
    dx = grid.spacing
    ham = harmonic_hamiltonian(grid, params)
    kin_rate = ham.kinetic_prefactor * grid.wavenumbers**2 / hbar
    v_rate = ham.potential / hbar
    c_aa = u1d_aa / hbar

    sigma = params.oscillator_length()
    mu_scale = max(params.trap_omega_x,
                   0.75 * n_atoms * c_aa / max(thomas_fermi_radius(
                       n_atoms, u1d_aa, params), sigma))

    def renorm(p):
        return p * math.sqrt(n_atoms / (np.sum(p**2) * dx))

    def residual_of(p):
        kin = np.fft.ifft(kin_rate * np.fft.fft(p)).real
        h_psi = kin + (v_rate + c_aa * p**2) * p
        mu = np.sum(p * h_psi) / np.sum(p**2)
        res = h_psi - mu * p
        rel = math.sqrt(float(np.sum(res**2)) / float(np.sum((mu * p) ** 2)))
        return rel, res

    psi = renorm(np.exp(-grid.x**2 / (2.0 * sigma**2)).astype(float))

    tau = 0.05 / mu_scale
    kin_half = np.exp(-kin_rate * 0.5 * tau)
    warm_steps = min(2000, max_iter)
    for _ in range(warm_steps):
        psi = np.fft.ifft(kin_half * np.fft.fft(psi)).real
        psi *= np.exp(-(v_rate + c_aa * psi**2) * tau)
        psi = np.fft.ifft(kin_half * np.fft.fft(psi)).real
        psi = renorm(np.abs(psi))

    # projected preconditioned descent with a monotone residual: a step
    # that does not reduce the residual is rejected and gamma halved
    precond = 1.0 / (4.0 * mu_scale + kin_rate)
    gamma = 0.4
    rn, res = residual_of(psi)
    for _ in range(max_iter):
        if rn < tol:
            psi = renorm(np.abs(psi))
            peak = float(np.max(psi**2))
            edge = max(float(psi[0] ** 2), float(psi[-1] ** 2))
            if peak > 0 and edge > 1e-8 * peak:
                import warnings
                warnings.warn(
                    f"ground-state density at the grid edge is "
                    f"{edge / peak:.2e} of the peak; enlarge the extent",
                    stacklevel=2)
            return psi
        step = np.fft.ifft(precond * np.fft.fft(res)).real
        step -= np.sum(psi * step) / np.sum(psi * psi) * psi
        candidate = renorm(psi - gamma * step)
        rn_new, res_new = residual_of(candidate)
        if rn_new < rn:
            psi, rn, res = candidate, rn_new, res_new
            gamma = min(gamma * 1.05, 0.5)
        else:
            gamma *= 0.5
            if gamma < 1e-8:
                break
    raise ConvergenceError(
        f"ground-state iteration did not reach tol={tol} "
        f"(best residual {rn:.3e})", residual=rn)


def evolve_gpe(fields: FieldPair, couplings: DerivedCouplings, omega: float,
               omega_r: float, dt: float | None, t_grid,
               params: PhysicalParams) -> FieldSeries:
    """Real-time mean-field evolution of a two-component pair."""
    if dt is None:
        dt = default_time_step(fields.grid, params)
    out_a, out_b = split_step_evolve(
        fields.psi_a, fields.psi_b, fields.grid, params, couplings,
        omega, omega_r, dt, t_grid, t_start=fields.time)
    return FieldSeries(grid=fields.grid, times=np.asarray(t_grid, dtype=float),
                       psi_a=out_a, psi_b=out_b)


def beamsplitter_pair(fields: FieldPair, mixing_angle: float,
                      phase: float = math.pi) -> FieldPair:
    """Pointwise 2x2 mode mixing; the default phase puts the spin on +x."""
    c = math.cos(mixing_angle / 2.0)
    s = math.sin(mixing_angle / 2.0)
    ph = complex(math.cos(phase), math.sin(phase))
    new_a = c * fields.psi_a + ph * s * fields.psi_b
    new_b = -np.conj(ph) * s * fields.psi_a + c * fields.psi_b
    return replace(fields, psi_a=new_a, psi_b=new_b)


def density_overlap(fields: FieldPair) -> float:
    """|integral psi_a* psi_b| normalized by the component norms; in [0, 1]."""
    dx = fields.grid.spacing
    na = float(np.sum(np.abs(fields.psi_a) ** 2) * dx)
    nb = float(np.sum(np.abs(fields.psi_b) ** 2) * dx)
    if na <= 0.0 or nb <= 0.0:
        raise ValueError("density_overlap requires both components to be populated")
    ov = np.sum(np.conj(fields.psi_a) * fields.psi_b) * dx
    return min(float(np.abs(ov)) / math.sqrt(na * nb), 1.0)


def rms_width(psi: np.ndarray, grid: SpatialGrid) -> float:
    """Root-mean-square width of |psi|^2 about its centroid."""
    density = np.abs(psi) ** 2
    norm = float(np.sum(density))
    if norm <= 0.0:
        raise ValueError("field has zero norm")
    x = grid.x
    mean = float(np.sum(x * density)) / norm
    return math.sqrt(float(np.sum((x - mean) ** 2 * density)) / norm)


def energy_total(fields: FieldPair, couplings: DerivedCouplings, omega: float,
                 params: PhysicalParams) -> float:
    """Kinetic + potential + interaction + coupling energy (J); conserved
    by the mean-field evolution when omega_r = 0."""
    grid = fields.grid
    dx = grid.spacing
    m_pts = grid.n_points
    ham = harmonic_hamiltonian(grid, params)
    k2 = grid.wavenumbers**2
    e_kin = 0.0
    for psi in (fields.psi_a, fields.psi_b):
        ft = np.fft.fft(psi)
        # Parseval: integral |d psi/dx|^2 dx = (dx/M) sum_k k^2 |psi_k|^2
        e_kin += ham.kinetic_prefactor * float(np.sum(k2 * np.abs(ft) ** 2)) * dx / m_pts
    na = np.abs(fields.psi_a) ** 2
    nb = np.abs(fields.psi_b) ** 2
    e_pot = float(np.sum(ham.potential * (na + nb))) * dx
    e_int = float(np.sum(0.5 * couplings.u1d_aa * na**2
                         + 0.5 * couplings.u1d_bb * nb**2
                         + couplings.u1d_ab * na * nb)) * dx
    e_coup = params.hbar * omega * float(np.sum(np.real(
        np.conj(fields.psi_a) * fields.psi_b))) * dx
    return e_kin + e_pot + e_int + e_coup
