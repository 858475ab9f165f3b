"""Spin moments, squeezing parameter, and quantum Fisher information.

Stochastic ensembles estimate symmetrically ordered operator moments; the
conversion constants that recover physical (normally interpreted) moments
are applied here: half a quantum per mode in the total number, and 1/8 per
occupied spatial mode in each spin variance. Cross-covariances need no
correction (the symmetric-ordered cross products map to plain products of
the phase-space symbols).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SqueezingUndefinedError

_AXES = ("x", "y", "z")


@dataclass(frozen=True)
class SpinMoments:
    """First and second collective-spin moments at one instant.

    `cov_j` is the symmetrized quantum covariance matrix in (x, y, z)
    order. For stochastic sources the standard-error fields hold the
    first-order estimator uncertainties; exact sources leave them zero.
    """

    time: float
    mean_j: np.ndarray  # (3,)
    cov_j: np.ndarray  # (3, 3) symmetrized
    n_mean: float
    se_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    se_cov: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    n_traj: int | None = None

    def var(self, axis: str) -> float:
        i = _AXES.index(axis)
        return float(self.cov_j[i, i])


@dataclass(frozen=True)
class MetrologyRecord:
    """Figures of merit derived from one SpinMoments entry."""

    xi: float
    theta_min: float
    qfi: float
    theta_max: float
    delta_phi_squeezing: float
    delta_phi_qfi: float
    se_xi: float = 0.0
    se_qfi: float = 0.0
    degenerate_theta: bool = False


def _two_mode_symbols(alpha: np.ndarray, beta: np.ndarray):
    cross = np.conj(alpha) * beta
    j_x = cross.real.astype(float)
    j_y = (-cross.imag).astype(float)
    j_z = 0.5 * (np.abs(alpha) ** 2 - np.abs(beta) ** 2)
    n_tot = np.abs(alpha) ** 2 + np.abs(beta) ** 2
    return j_x, j_y, j_z, n_tot


def _moments_from_symbols(j_x, j_y, j_z, n_tot, *, time, number_subtraction,
                          variance_subtraction) -> SpinMoments:
    """Shared estimator core; the subtraction constants encode the mode count."""
    sym = np.stack([j_x, j_y, j_z])  # (3, n)
    n = sym.shape[1]
    if n < 2:
        raise ValueError("at least two trajectories are required for moments")
    mean = sym.mean(axis=1)
    dev = sym - mean[:, None]
    cov = (dev @ dev.T) / (n - 1)
    cov[np.diag_indices(3)] -= variance_subtraction
    n_mean = float(n_tot.mean() - number_subtraction)

    se_mean = sym.std(axis=1, ddof=1) / math.sqrt(n)
    # var(sample variance) = mu4/n - s^4 (n-3)/(n (n-1)); off-diagonals use
    # the first-order (mu22 - c^2)/n form.
    se_cov = np.zeros((3, 3))
    for i in range(3):
        s2 = float(dev[i] @ dev[i]) / (n - 1)
        mu4 = float(np.mean(dev[i] ** 4))
        se_cov[i, i] = math.sqrt(max(mu4 / n - s2**2 * (n - 3) / (n * (n - 1)), 0.0))
        for j in range(i + 1, 3):
            c = float(dev[i] @ dev[j]) / (n - 1)
            mu22 = float(np.mean(dev[i] ** 2 * dev[j] ** 2))
            se_cov[i, j] = se_cov[j, i] = math.sqrt(max((mu22 - c * c) / n, 0.0))
    return SpinMoments(time=float(time), mean_j=mean, cov_j=cov, n_mean=n_mean,
                       se_mean=se_mean, se_cov=se_cov, n_traj=n)


def spin_moments_from_two_mode(ensemble) -> SpinMoments:
    """Ordering-corrected spin moments of a two-mode trajectory ensemble.

    Subtracts one quantum from the mean total number (half per mode) and
    1/8 from each spin variance; a pure-vacuum ensemble then reports zero
    atoms and zero spin fluctuations up to sampling error.
    """
    j_x, j_y, j_z, n_tot = _two_mode_symbols(ensemble.alpha, ensemble.beta)
    return _moments_from_symbols(
        j_x, j_y, j_z, n_tot, time=ensemble.time,
        number_subtraction=1.0, variance_subtraction=0.125)


def spin_moments_from_two_mode_series(series) -> list[SpinMoments]:
    """Apply `spin_moments_from_two_mode` to every stored output time."""
    out = []
    for k in range(len(series.times)):
        j_x, j_y, j_z, n_tot = _two_mode_symbols(series.alpha[k], series.beta[k])
        out.append(_moments_from_symbols(
            j_x, j_y, j_z, n_tot, time=series.times[k],
            number_subtraction=1.0, variance_subtraction=0.125))
    return out


def spin_moments_from_fields(accumulators, grid=None) -> list[SpinMoments]:
    """Spin moments from a multimode ensemble's accumulated symbols.

    The half-quantum bookkeeping generalizes the two-mode constants to M
    grid modes: the mean number subtracts M (total across both components)
    and each spin variance subtracts M/8. With M = 1 this reduces exactly
    to the two-mode conversion.
    """
    if grid is not None and grid.n_points != accumulators.n_points:
        raise ValueError(
            f"grid has {grid.n_points} points but accumulators were recorded "
            f"on {accumulators.n_points}")
    m_points = accumulators.n_points
    out = []
    for k in range(len(accumulators.times)):
        out.append(_moments_from_symbols(
            accumulators.j_x[k], accumulators.j_y[k], accumulators.j_z[k],
            accumulators.n_tot[k], time=accumulators.times[k],
            number_subtraction=float(m_points),
            variance_subtraction=m_points / 8.0))
    return out


def _variance_ellipse(cov: np.ndarray):
    """Midpoint, radius and max-variance angle of Var(J_z cos t + J_y sin t)."""
    v_y = float(cov[1, 1])
    v_z = float(cov[2, 2])
    c_yz = float(cov[1, 2])
    mid = 0.5 * (v_y + v_z)
    half_diff = 0.5 * (v_z - v_y)
    radius = math.hypot(half_diff, c_yz)
    theta_max = 0.5 * math.atan2(c_yz, half_diff)
    return mid, radius, theta_max


def _wrap_angle(theta: float) -> float:
    """Fold an ellipse-axis angle into (-pi/2, pi/2]."""
    theta = (theta + 0.5 * math.pi) % math.pi - 0.5 * math.pi
    return 0.5 * math.pi if theta == -0.5 * math.pi else theta


def _is_degenerate(mid: float, radius: float) -> bool:
    return radius <= 1e-12 * max(mid, 1.0)


def _projected_var_se(se_cov: np.ndarray, theta: float) -> float:
    c, s = math.cos(theta), math.sin(theta)
    return math.sqrt((c * c * se_cov[2, 2]) ** 2 + (s * s * se_cov[1, 1]) ** 2
                     + (2 * s * c * se_cov[1, 2]) ** 2)


def squeezing_parameter(moments: SpinMoments) -> tuple[float, float]:
    """Wineland parameter xi and the angle minimizing Var(J_z cos t + J_y sin t).

    Closed form from the 2x2 (y, z) covariance block. Raises
    SqueezingUndefinedError when the mean spin along x is consistent with
    zero (collapsed or oversqueezed states have no meaningful xi).
    """
    j_x = float(moments.mean_j[0])
    se_jx = float(moments.se_mean[0])
    if abs(j_x) <= max(3.0 * se_jx, 1e-9 * max(abs(moments.n_mean), 1.0)):
        raise SqueezingUndefinedError(
            f"<J_x> = {j_x:.4g} +- {se_jx:.2g} is consistent with zero")
    mid, radius, theta_max = _variance_ellipse(moments.cov_j)
    if _is_degenerate(mid, radius):
        var_min, theta_min = mid, 0.0
    else:
        var_min = mid - radius
        theta_min = _wrap_angle(theta_max + 0.5 * math.pi)
    if var_min < 0.0:
        raise SqueezingUndefinedError(
            f"minimal variance {var_min:.4g} is negative beyond tolerance")
    xi = math.sqrt(moments.n_mean * var_min) / abs(j_x)
    return xi, theta_min


def qfi(moments: SpinMoments) -> tuple[float, float]:
    """QFI proxy 4 max_theta Var(J_theta) and the maximizing angle.

    The value is the largest eigenvalue of the (y, z) covariance block
    times four. The angle uses the same parameterization as
    `squeezing_parameter` (J_theta = J_z cos t + J_y sin t), so the two
    reported angles are orthogonal axes of one variance ellipse.
    """
    mid, radius, theta_max = _variance_ellipse(moments.cov_j)
    if _is_degenerate(mid, radius):
        return 4.0 * mid, 0.0
    return 4.0 * (mid + radius), _wrap_angle(theta_max)


def phase_sensitivity(record: MetrologyRecord, n_atoms: float) -> tuple[float, float]:
    """Interferometric phase resolutions: (xi/sqrt(N), Cramer-Rao 1/sqrt(F_Q))."""
    if not n_atoms >= 1:
        raise ValueError("n_atoms must be at least 1")
    return record.xi / math.sqrt(n_atoms), 1.0 / math.sqrt(record.qfi)


def metrology_record(moments: SpinMoments) -> MetrologyRecord:
    """Full record: xi, F_Q, optimal angles, sensitivities, delta-method errors."""
    mid, radius, _ = _variance_ellipse(moments.cov_j)
    degenerate = _is_degenerate(mid, radius)
    xi, theta_min = squeezing_parameter(moments)
    f_q, theta_max = qfi(moments)
    var_min = mid if degenerate else mid - radius
    j_x = float(moments.mean_j[0])
    se_vmin = _projected_var_se(moments.se_cov, theta_min)
    se_vmax = _projected_var_se(moments.se_cov, theta_max)
    rel = 0.0
    if var_min > 0.0:
        rel = (0.5 * se_vmin / var_min) ** 2
    se_xi = xi * math.sqrt(rel + (float(moments.se_mean[0]) / j_x) ** 2)
    return MetrologyRecord(
        xi=xi, theta_min=theta_min, qfi=f_q, theta_max=theta_max,
        delta_phi_squeezing=xi / math.sqrt(moments.n_mean) if moments.n_mean > 0 else math.nan,
        delta_phi_qfi=1.0 / math.sqrt(f_q) if f_q > 0 else math.inf,
        se_xi=se_xi, se_qfi=4.0 * se_vmax, degenerate_theta=degenerate)
