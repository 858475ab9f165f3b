import math

import numpy as np
import pytest

from twistturn import (
    SpinMoments,
    build_hamiltonian,
    css_state,
    evolve_series,
    spin_moments_exact,
)
from twistturn.calibration import (
    ChiFit,
    OmegaScanResult,
    _golden_section,
    fit_chi,
    oat_moments_analytic,
    oat_var_jy_analytic,
    scan_omega,
)
from twistturn.errors import FitError


def _synthetic_moments(n_atoms, chi, times, tilt=math.pi / 2):
    means, covs = oat_moments_analytic(n_atoms, chi, times, tilt)
    return [SpinMoments(time=t, mean_j=means[i], cov_j=covs[i], n_mean=n_atoms)
            for i, t in enumerate(times)]


class TestAnalyticMoments:
    @pytest.mark.parametrize("n,tilt,chi_minus", [
        (60, 1.23, 0.0), (100, math.pi / 2, 0.0), (40, 2.4, 0.0),
        (60, 1.231, -1.0 / 3.0), (80, 0.9, 0.5)])
    def test_matches_exact_solver(self, n, tilt, chi_minus):
        chi = 1.0
        times = np.array([0.03, 0.11])
        means, covs = oat_moments_analytic(n, chi, times, tilt,
                                           chi_minus=chi_minus)
        h = build_hamiltonian(chi, chi_minus, 0.0, n)
        psi0 = css_state(n, tilt, 0.0)
        for i, state in enumerate(evolve_series(psi0, h, times)):
            ref = spin_moments_exact(state)
            assert np.max(np.abs(means[i] - ref.mean_j)) < 1e-9
            assert np.max(np.abs(covs[i] - ref.cov_j)) < 1e-9

    def test_large_n_stays_finite(self):
        var = oat_var_jy_analytic(100000, 1.0, np.linspace(0.0, 0.01, 7))
        assert np.all(np.isfinite(var))
        assert var[0] == pytest.approx(25000.0, rel=1e-9)
        assert np.all(np.diff(var) > 0.0)

    def test_kitagawa_ueda_variance_form(self):
        # symmetric split: Var(J_y) = (N/4)[N+1-(N-1) cos^(N-2)(2 chi t)]/2
        n, chi, t = 500, 1.0, 0.002
        got = float(oat_var_jy_analytic(n, chi, [t])[0])
        expected = n / 8.0 * (n + 1 - (n - 1) * math.cos(2 * chi * t) ** (n - 2))
        assert got == pytest.approx(expected, rel=1e-12)


class TestGoldenSection:
    def test_finds_quadratic_minimum(self):
        # value comparisons cannot localize better than sqrt(eps)
        x, f = _golden_section(lambda x: (x - 1.7) ** 2 + 3.0, -5.0, 5.0)
        assert x == pytest.approx(1.7, abs=1e-6)
        assert f == pytest.approx(3.0, abs=1e-10)

    def test_deterministic(self):
        f = lambda x: math.sin(3 * x) + 0.1 * x * x
        assert _golden_section(f, -2, 2) == _golden_section(f, -2, 2)


class TestFitChi:
    def test_round_trip_identity(self):
        chi_true = 3.3e-3
        n = 50000
        times = np.linspace(0.0, 4.0 / (chi_true * n), 30) + 1e-6
        moments = _synthetic_moments(n, chi_true, times)
        fit = fit_chi(moments, n, chi_estimate=2.0e-3)
        assert fit.chi_hat == pytest.approx(chi_true, rel=1e-6)
        assert fit.fit_residual < 1e-12

    def test_scale_consistency(self):
        chi_true = 1.1e-3
        n = 20000
        times = np.linspace(0.0, 4.0 / (chi_true * n), 25) + 1e-6
        fit1 = fit_chi(_synthetic_moments(n, chi_true, times), n,
                       chi_estimate=chi_true)
        fit2 = fit_chi(_synthetic_moments(n, 2 * chi_true, times), n,
                       chi_estimate=chi_true)
        assert fit2.chi_hat / fit1.chi_hat == pytest.approx(2.0, rel=0.01)

    def test_noisy_data_within_one_percent(self):
        chi_true = 2.2e-3
        n = 100000
        times = np.linspace(0.0, 3.0 / (chi_true * n), 25) + 1e-6
        moments = _synthetic_moments(n, chi_true, times)
        rng = np.random.default_rng(0)
        noisy = []
        for m in moments:
            cov = m.cov_j.copy()
            cov[1, 1] *= 1.0 + 0.003 * rng.standard_normal()
            noisy.append(SpinMoments(time=m.time, mean_j=m.mean_j, cov_j=cov,
                                     n_mean=m.n_mean))
        fit = fit_chi(noisy, n, chi_estimate=1.5e-3)
        assert fit.chi_hat == pytest.approx(chi_true, rel=0.01)

    def test_tilted_reference(self):
        chi_true = 5.0e-3
        n = 30000
        tilt = 2.0 * math.acos(math.sqrt(2.0 / 3.0))
        times = np.linspace(0.0, 3.0 / (chi_true * n), 25) + 1e-6
        moments = _synthetic_moments(n, chi_true, times, tilt=tilt)
        fit = fit_chi(moments, n, chi_estimate=4e-3, tilt_theta=tilt)
        assert fit.chi_hat == pytest.approx(chi_true, rel=1e-4)

    def test_tilted_reference_with_chi_minus(self):
        chi_true = 5.0e-3
        ratio = -1.0 / 3.0
        n = 30000
        tilt = 2.0 * math.acos(math.sqrt(2.0 / 3.0))
        times = np.linspace(0.0, 3.0 / (chi_true * n), 25) + 1e-6
        means, covs = oat_moments_analytic(n, chi_true, times, tilt,
                                           chi_minus=ratio * chi_true)
        moments = [SpinMoments(time=t, mean_j=means[i], cov_j=covs[i],
                               n_mean=n) for i, t in enumerate(times)]
        fit = fit_chi(moments, n, chi_estimate=4e-3, tilt_theta=tilt,
                      chi_minus_ratio=ratio)
        assert fit.chi_hat == pytest.approx(chi_true, rel=1e-4)

    def test_flat_variance_rejected(self):
        n = 1000
        times = np.linspace(0.0, 1e-5, 10)
        moments = _synthetic_moments(n, 1e-6, times)  # essentially no growth
        with pytest.raises(FitError, match="growth"):
            fit_chi(moments, n, chi_estimate=1e-3)

    def test_requires_chi_estimate(self):
        moments = _synthetic_moments(100, 1.0, [0.0, 0.01, 0.02])
        with pytest.raises(FitError):
            fit_chi(moments, 100, chi_estimate=None)

    def test_window_caps_at_variance_threshold(self):
        chi_true = 1.0
        n = 400
        times = np.linspace(1e-4, 0.5, 60)
        moments = _synthetic_moments(n, chi_true, times)
        fit = fit_chi(moments, n, chi_estimate=0.7)
        cap = 0.0625 * n * n
        var_jy = np.array([m.cov_j[1, 1] for m in moments])
        first_cross = times[np.nonzero(var_jy >= cap)[0][0]]
        assert fit.time_window[1] == pytest.approx(first_cross)
        assert fit.chi_hat == pytest.approx(chi_true, rel=1e-3)


class TestScanResultTypes:
    def test_best_fraction_must_be_scanned(self):
        with pytest.raises(ValueError):
            OmegaScanResult(fractions=(0.7, 1.0), peak_variance=(1.0, 2.0),
                            peak_se=(0.1, 0.1), best_fraction=0.85)

    def test_chi_fit_validation(self):
        with pytest.raises(ValueError):
            ChiFit(chi_hat=-1.0, fit_residual=0.0, time_window=(0.0, 1.0))


@pytest.mark.slow
class TestScanOmega:
    def test_singleton_scan(self, params):
        from twistturn import ScatteringCase, derive_couplings
        from twistturn.gpe import SpatialGrid, default_grid
        from twistturn.multimode import TwEnsembleConfig

        case = ScatteringCase.case_i()
        coup = derive_couplings(case, params)
        n_atoms = 1.0e4
        grid = SpatialGrid(128, default_grid(n_atoms, coup.u1d_aa, params).extent)
        config = TwEnsembleConfig(case=case, n_atoms=n_atoms, n_traj=32,
                                  grid=grid, t_grid=np.linspace(5e-4, 5e-3, 6),
                                  seed=17, params=params)
        result = scan_omega(config, [1.0], chi_hat=2.4e-3, workers=2)
        assert result.best_fraction == 1.0
        assert len(result.peak_variance) == 1
        assert result.peak_variance[0] > 0.0
