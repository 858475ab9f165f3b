"""Effective-chi calibration against single-mode twisting, and the Omega scan.

The multimode effective chi is inferred by matching the growth of
Var(J_y) under Omega = 0 to the closed-form single-mode twisting
dynamics of a (possibly tilted) coherent spin state. The closed forms
are exact for any atom number, so the reference side of the fit is
deterministic and cheap even at N = 1e5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import FitError
from .multimode import OmegaPolicy, TwEnsembleConfig, run_ensemble
from .observables import spin_moments_from_fields


def oat_moments_analytic(n_atoms: int, chi: float, times,
                         tilt_theta: float = math.pi / 2.0,
                         chi_minus: float = 0.0):
    """Exact spin moments of a coherent state twisting under the
    single-mode Hamiltonian chi J_z^2 + chi_minus (N-1) J_z.

    The initial state is the spin coherent state at polar angle
    `tilt_theta` (pi/2 for the symmetric split; the breathe-together
    split tilts it). The chi_minus term commutes with the twisting, so
    it acts as a z-rotation of the twisted moments at angular rate
    chi_minus (N-1). Returns (means (T, 3), covariances (T, 3, 3)).
    Powers like g^(N-1) are taken in log space so large N stays finite.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    n = n_atoms
    c = math.cos(tilt_theta / 2.0)
    s = math.sin(tilt_theta / 2.0)
    e = np.exp(1j * chi * times)
    g = c * c * e + s * s / e
    g2 = c * c * e**2 + s * s / e**2
    h = c * c * e - s * s / e

    def cpow(base, k):
        return np.exp(k * np.log(base))

    jp = n * c * s * cpow(g, n - 1)
    jp2 = n * (n - 1) * c * c * s * s * cpow(g2, n - 2)
    jpz = 0.5 * n * c * s * cpow(g, n - 2) * (-g + (n - 1) * h)
    jz = 0.5 * n * (c * c - s * s)
    jz2 = n * c * c * s * s + 0.25 * n * n * (c * c - s * s) ** 2
    sym_pm = 0.5 * n * (0.5 * n + 1.0) - jz2  # (J+J- + J-J+)/2

    means = np.stack([jp.real, -jp.imag, np.full_like(times, jz)], axis=-1)
    big_x = 2.0 * jpz + jp
    covs = np.empty(times.shape + (3, 3))
    covs[..., 0, 0] = 0.5 * jp2.real + 0.5 * sym_pm
    covs[..., 1, 1] = -0.5 * jp2.real + 0.5 * sym_pm
    covs[..., 2, 2] = jz2
    covs[..., 0, 1] = covs[..., 1, 0] = -0.5 * jp2.imag
    covs[..., 0, 2] = covs[..., 2, 0] = 0.5 * big_x.real
    covs[..., 1, 2] = covs[..., 2, 1] = -0.5 * big_x.imag
    covs -= means[..., :, None] * means[..., None, :]
    if chi_minus != 0.0:
        phi = chi_minus * (n - 1) * times
        cphi, sphi = np.cos(phi), np.sin(phi)
        rot = np.zeros(times.shape + (3, 3))
        rot[..., 0, 0] = cphi
        rot[..., 0, 1] = sphi
        rot[..., 1, 0] = -sphi
        rot[..., 1, 1] = cphi
        rot[..., 2, 2] = 1.0
        means = np.einsum("...ij,...j->...i", rot, means)
        covs = np.einsum("...ij,...jk,...lk->...il", rot, covs, rot)
    return means, covs


def oat_var_jy_analytic(n_atoms: int, chi: float, times,
                        tilt_theta: float = math.pi / 2.0,
                        chi_minus: float = 0.0) -> np.ndarray:
    _, covs = oat_moments_analytic(n_atoms, chi, times, tilt_theta, chi_minus)
    return covs[..., 1, 1]


@dataclass(frozen=True)
class ChiFit:
    """Result of matching multimode Var(J_y) growth to single-mode twisting."""

    chi_hat: float  # rad/s
    fit_residual: float  # mean squared log deviation at the optimum
    time_window: tuple[float, float]
    reference: str = ""

    def __post_init__(self):
        if not self.chi_hat > 0.0:
            raise ValueError("chi_hat must be positive")
        if not math.isfinite(self.fit_residual):
            raise ValueError("fit residual must be finite")


def _golden_section(f, lo: float, hi: float, iterations: int = 80):
    """Deterministic scalar minimization on [lo, hi]."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - inv_phi * (b - a)
    x2 = a + inv_phi * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(iterations):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - inv_phi * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + inv_phi * (b - a)
            f2 = f(x2)
    x = x1 if f1 <= f2 else x2
    return x, min(f1, f2)


def fit_chi(moments, n_atoms: float, window=None, chi_estimate: float = None,
            tilt_theta: float = math.pi / 2.0, chi_minus_ratio: float = 0.0,
            reference: str = "") -> ChiFit:
    """Infer the effective twisting rate from an Omega = 0 moment series.

    Minimizes the mean squared difference of log Var(J_y) between the
    series and the single-mode closed form over chi, bracketed to
    [0.1, 10] times `chi_estimate` (the density-overlap estimate) and
    solved by golden section on log chi. The fit window defaults to the
    early-growth region, capped at the first time Var(J_y) reaches
    N^2/16.

    `chi_minus_ratio` is chi_minus/chi, fixed by the scattering lengths
    (0 when a_aa = a_bb); for tilted splits the chi_minus z-rotation
    changes the Var(J_y) growth and must be in the reference.
    """
    if chi_estimate is None or not chi_estimate > 0.0:
        raise FitError("a positive chi_estimate is required to bracket the fit")
    times = np.array([m.time for m in moments], dtype=float)
    var_jy = np.array([m.cov_j[1, 1] for m in moments], dtype=float)
    if times.size < 3:
        raise FitError("need at least three moment entries to fit chi")

    if window is None:
        cap = 0.0625 * n_atoms**2
        above = np.nonzero(var_jy >= cap)[0]
        t_hi = times[above[0]] if above.size else times[-1]
        window = (times[0], t_hi)
    lo, hi = window
    mask = (times >= lo) & (times <= hi) & (var_jy > 0.0)
    if np.count_nonzero(mask) < 3:
        raise FitError(f"fewer than three usable points in window {window}")
    t_fit = times[mask]
    v_fit = var_jy[mask]
    if np.max(v_fit) < 1.5 * v_fit[0]:
        raise FitError(
            "variance shows no twisting-like growth inside the window "
            f"(max/first = {np.max(v_fit) / v_fit[0]:.3f})")

    log_v = np.log(v_fit)
    n_ref = int(round(n_atoms))

    def objective(log_chi):
        chi = math.exp(log_chi)
        ref = oat_var_jy_analytic(n_ref, chi, t_fit, tilt_theta,
                                  chi_minus=chi_minus_ratio * chi)
        if np.any(ref <= 0.0) or not np.all(np.isfinite(ref)):
            return math.inf
        return float(np.mean((log_v - np.log(ref)) ** 2))

    log_best, residual = _golden_section(
        objective, math.log(0.1 * chi_estimate), math.log(10.0 * chi_estimate))
    return ChiFit(chi_hat=math.exp(log_best), fit_residual=residual,
                  time_window=(float(t_fit[0]), float(t_fit[-1])),
                  reference=reference)


@dataclass(frozen=True)
class OmegaScanResult:
    """Peak spin variance for each trialled fraction of chi N / 2."""

    fractions: tuple
    peak_variance: tuple
    peak_se: tuple
    best_fraction: float

    def __post_init__(self):
        if self.best_fraction not in self.fractions:
            raise ValueError("best_fraction must be one of the scanned fractions")


def scan_omega(base_config: TwEnsembleConfig, fractions, chi_hat: float,
               workers: int = 1) -> OmegaScanResult:
    """Rank rotation rates Omega = fraction * chi_hat N / 2 by entangling power.

    Each fraction reuses the base configuration (and its seed, so the
    comparison is paired across fractions) and is scored by the maximum
    over the window of the largest spin variance max_i Var(J_i).
    """
    fractions = tuple(float(f) for f in fractions)
    if not fractions or any(f <= 0.0 for f in fractions):
        raise ValueError("fractions must be a nonempty collection of positives")
    peaks = []
    ses = []
    for frac in fractions:
        omega = frac * chi_hat * base_config.n_atoms / 2.0
        config = replace(base_config,
                         omega=OmegaPolicy(kind="explicit", value=omega),
                         label=f"{base_config.label}omega_scan_{frac:g}")
        try:
            acc = run_ensemble(config, workers=workers)
        except Exception as err:
            raise type(err)(
                f"scan point fraction={frac:g} (Omega={omega:.6g} rad/s) "
                f"failed: {err}") from err
        moments = spin_moments_from_fields(acc)
        variances = np.array([np.diag(m.cov_j) for m in moments])  # (T, 3)
        flat = int(np.argmax(variances))
        t_idx, axis = divmod(flat, 3)
        peaks.append(float(variances[t_idx, axis]))
        ses.append(float(moments[t_idx].se_cov[axis, axis]))
    best = fractions[int(np.argmax(peaks))]
    return OmegaScanResult(fractions=fractions, peak_variance=tuple(peaks),
                           peak_se=tuple(ses), best_fraction=best)
