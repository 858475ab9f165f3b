import math

import numpy as np
import pytest

from twistturn import ScatteringCase, derive_couplings
from twistturn.errors import ConfigError, IntegrationError
from twistturn.gpe import FieldPair, SpatialGrid, default_grid, evolve_gpe, ground_state
from twistturn.multimode import (
    OmegaPolicy,
    OmegaRPolicy,
    SplitPolicy,
    TwEnsembleConfig,
    beamsplitter_fields,
    calibrate_omega_r,
    evolve_tw,
    load_accumulators,
    run_ensemble,
    sample_wigner_initial,
    save_accumulators,
)
from twistturn.observables import spin_moments_from_fields


def _se(x):
    return np.std(x, ddof=1) / math.sqrt(x.size)


@pytest.fixture(scope="module")
def small_setup(params):
    case = ScatteringCase.case_i()
    coup = derive_couplings(case, params)
    n_atoms = 1.0e4
    grid = SpatialGrid(128, default_grid(n_atoms, coup.u1d_aa, params).extent)
    psi0 = ground_state(grid, n_atoms, coup.u1d_aa, params, tol=1e-9)
    return case, coup, n_atoms, grid, psi0


class TestWignerSampling:
    def test_noise_statistics(self, small_setup):
        _, _, n_atoms, grid, psi0 = small_setup
        psi_a, psi_b = sample_wigner_initial(psi0, grid, 10000, seed=3)
        eta_a = psi_a - psi0[None, :]
        # per-point quadrature variance 1/(4 dx)
        target = 0.25 / grid.spacing
        for col in (5, grid.n_points // 2):
            re = eta_a[:, col].real
            assert abs(np.var(re, ddof=1) - target) < 5 * _se(re**2)
            im = psi_b[:, col].imag
            assert abs(np.var(im, ddof=1) - target) < 5 * _se(im**2)

    def test_cross_correlations_vanish(self, small_setup):
        _, _, _, grid, psi0 = small_setup
        psi_a, psi_b = sample_wigner_initial(psi0, grid, 10000, seed=4)
        eta_a = psi_a - psi0[None, :]
        col = grid.n_points // 3
        cross = np.conj(eta_a[:, col]) * psi_b[:, col]
        assert abs(cross.real.mean()) < 5 * _se(cross.real)
        assert abs(cross.imag.mean()) < 5 * _se(cross.imag)
        # different points of the same component are independent too
        pair = np.conj(eta_a[:, col]) * eta_a[:, col + 7]
        assert abs(pair.real.mean()) < 5 * _se(pair.real)

    def test_mean_total_number(self, small_setup):
        _, _, n_atoms, grid, psi0 = small_setup
        psi_a, psi_b = sample_wigner_initial(psi0, grid, 8000, seed=5)
        tot = (np.sum(np.abs(psi_a) ** 2 + np.abs(psi_b) ** 2, axis=1)
               * grid.spacing - grid.n_points)
        assert abs(tot.mean() - n_atoms) < 5 * _se(tot)

    def test_reproducible(self, small_setup):
        _, _, _, grid, psi0 = small_setup
        a1 = sample_wigner_initial(psi0, grid, 32, seed=9)
        a2 = sample_wigner_initial(psi0, grid, 32, seed=9)
        assert np.array_equal(a1[0], a2[0]) and np.array_equal(a1[1], a2[1])


class TestBeamsplitterFields:
    def test_zero_angle_identity(self, small_setup):
        _, _, _, grid, psi0 = small_setup
        pair = FieldPair(grid, psi0.astype(complex), np.zeros_like(psi0, complex))
        out = beamsplitter_fields(pair, 0.0)
        assert np.array_equal(out.psi_a, pair.psi_a)

    def test_symmetric_split_equal_densities(self, small_setup):
        _, _, _, grid, psi0 = small_setup
        pair = FieldPair(grid, psi0.astype(complex), np.zeros_like(psi0, complex))
        out = beamsplitter_fields(pair, math.pi / 2)
        assert np.abs(out.psi_a) ** 2 == pytest.approx(np.abs(out.psi_b) ** 2,
                                                       rel=1e-12, abs=1e-12)

    def test_breathe_together_population_ratio(self, params):
        case = ScatteringCase.case_ii()
        coup = derive_couplings(case, params)
        n_atoms = 1.0e4
        grid = SpatialGrid(128, default_grid(n_atoms, coup.u1d_aa, params).extent)
        psi0 = ground_state(grid, n_atoms, coup.u1d_aa, params, tol=1e-8)
        angle = SplitPolicy(kind="breathe_together").resolve(case)
        psi_a, psi_b = sample_wigner_initial(psi0, grid, 4000, seed=6)
        psi_a, psi_b = beamsplitter_fields((psi_a, psi_b), angle)
        na = np.sum(np.abs(psi_a) ** 2, axis=1) * grid.spacing - grid.n_points / 2
        nb = np.sum(np.abs(psi_b) ** 2, axis=1) * grid.spacing - grid.n_points / 2
        ratio = na.mean() / nb.mean()
        assert ratio == pytest.approx(2.0, rel=0.01)


class TestEvolveTw:
    def test_zero_noise_reduces_to_mean_field(self, small_setup, params):
        coup = small_setup[1]
        grid, psi0 = small_setup[3], small_setup[4]
        pair = beamsplitter_fields(
            FieldPair(grid, psi0.astype(complex), np.zeros_like(psi0, complex)),
            math.pi / 2)
        ts = [1e-3, 3e-3]
        tw = evolve_tw(pair, coup, 30.0, 0.0, ts, params, correction_mode="none")
        mf = evolve_gpe(pair, coup, 30.0, 0.0, None, ts, params)
        rel = np.max(np.abs(tw.psi_a[-1] - mf.psi_a[-1])) / np.max(np.abs(mf.psi_a[-1]))
        assert rel < 1e-10

    def test_correction_modes_differ_by_subtraction(self, small_setup, params):
        coup = small_setup[1]
        grid, psi0 = small_setup[3], small_setup[4]
        psi_a, psi_b = sample_wigner_initial(psi0, grid, 2, seed=11)
        pair = FieldPair(grid, psi_a[0], psi_b[0])
        out_paper = evolve_tw(pair, coup, 0.0, 0.0, [2e-3], params,
                              correction_mode="paper")
        out_weyl = evolve_tw(pair, coup, 0.0, 0.0, [2e-3], params,
                             correction_mode="weyl")
        assert not np.allclose(out_paper.psi_a, out_weyl.psi_a)

    def test_norm_conserved_per_trajectory(self, small_setup, params):
        coup = small_setup[1]
        grid, psi0 = small_setup[3], small_setup[4]
        psi_a, psi_b = sample_wigner_initial(psi0, grid, 4, seed=12)
        psi_a, psi_b = beamsplitter_fields((psi_a, psi_b), math.pi / 2)
        from twistturn.gpe import split_step_evolve
        out_a, out_b = split_step_evolve(
            psi_a, psi_b, grid, params, coup, 50.0, 0.0, None or 5e-7, [5e-3],
            subtract_self=1.0, subtract_cross=1.0)
        n0 = np.sum(np.abs(psi_a) ** 2 + np.abs(psi_b) ** 2, axis=1)
        n1 = np.sum(np.abs(out_a[-1]) ** 2 + np.abs(out_b[-1]) ** 2, axis=1)
        assert np.max(np.abs(n1 - n0) / n0) < 1e-8


class TestPolicies:
    def test_omega_policies(self):
        assert OmegaPolicy(kind="zero").resolve(100, 2.0) == 0.0
        assert OmegaPolicy(kind="tnt").resolve(100, 2.0) == pytest.approx(100.0)
        assert OmegaPolicy(kind="tnt", chi=4.0).resolve(100, 2.0) == pytest.approx(200.0)
        assert OmegaPolicy(kind="fraction", fraction=0.85).resolve(
            100, 2.0) == pytest.approx(85.0)
        assert OmegaPolicy(kind="explicit", value=7.0).resolve(100, 2.0) == 7.0
        with pytest.raises(ConfigError):
            OmegaPolicy(kind="bogus")

    def test_split_policies(self):
        assert SplitPolicy().resolve(ScatteringCase.case_i()) == pytest.approx(
            math.pi / 2)
        angle = SplitPolicy(kind="breathe_together").resolve(ScatteringCase.case_ii())
        assert math.cos(angle / 2) ** 2 == pytest.approx(2.0 / 3.0)
        with pytest.raises(ConfigError):
            SplitPolicy(kind="breathe_together").resolve(ScatteringCase.case_iii())

    def test_omega_r_policy_validation(self):
        with pytest.raises(ConfigError):
            OmegaRPolicy(kind="sometimes")


@pytest.fixture(scope="module")
def tiny_config(small_setup, params):
    case, _, n_atoms, grid, _ = small_setup
    return TwEnsembleConfig(
        case=case, n_atoms=n_atoms, n_traj=96, grid=grid,
        t_grid=np.array([0.0, 1e-3]), seed=99, params=params)


class TestRunEnsemble:
    def test_initial_moments_are_css(self, small_setup, params):
        case, _, n_atoms, grid, _ = small_setup
        config = TwEnsembleConfig(case=case, n_atoms=n_atoms, n_traj=512,
                                  grid=grid, t_grid=np.array([0.0]), seed=31,
                                  params=params)
        acc = run_ensemble(config)
        m = spin_moments_from_fields(acc)[0]
        assert abs(m.mean_j[0] - n_atoms / 2) < 5 * m.se_mean[0]
        assert abs(m.mean_j[1]) < 5 * m.se_mean[1]
        assert abs(m.mean_j[2]) < 5 * m.se_mean[2]
        for i in range(3):
            assert abs(m.cov_j[i, i] - n_atoms / 4) < 5 * m.se_cov[i, i]
        assert m.n_mean == pytest.approx(n_atoms, rel=0.01)

    def test_deterministic_and_worker_independent(self, tiny_config):
        acc1 = run_ensemble(tiny_config, workers=1)
        acc2 = run_ensemble(tiny_config, workers=2)
        for name in ("j_x", "j_y", "j_z", "n_tot", "overlap"):
            assert np.array_equal(getattr(acc1, name), getattr(acc2, name))

    def test_seed_changes_results(self, tiny_config):
        from dataclasses import replace
        acc1 = run_ensemble(tiny_config)
        acc2 = run_ensemble(replace(tiny_config, seed=100))
        assert not np.array_equal(acc1.j_x, acc2.j_x)

    def test_warns_when_occupancy_low(self, params):
        case = ScatteringCase.case_i()
        coup = derive_couplings(case, params)
        grid = SpatialGrid(256, default_grid(100.0, coup.u1d_aa, params).extent)
        config = TwEnsembleConfig(case=case, n_atoms=100.0, n_traj=4,
                                  grid=grid, t_grid=np.array([0.0]), seed=1,
                                  params=params)
        with pytest.warns(UserWarning, match="validity heuristic"):
            acc = run_ensemble(config)
        assert any("validity" in w for w in acc.warnings)

    def test_failure_policy(self, tiny_config, monkeypatch):
        import twistturn.multimode as mm

        real = mm._run_block

        def sabotage(task, bad_fraction):
            start, ov, na, nb = real(task)
            n_bad = int(bad_fraction * ov.shape[1]) if start == 0 else 0
            if n_bad:
                ov[:, :n_bad] = np.nan
            return start, ov, na, nb

        monkeypatch.setattr(mm, "_run_block", lambda t: sabotage(t, 0.05))
        with pytest.raises(IntegrationError):
            mm.run_ensemble(tiny_config)

        monkeypatch.setattr(mm, "_run_block", lambda t: sabotage(t, 0.005))
        acc = mm.run_ensemble(tiny_config)
        assert acc.failed_trajectories == []


class TestOmegaRCalibration:
    def test_compensation_cancels_phase_drift(self, params):
        # Case III drifts; feeding the fitted slope back flattens it
        case = ScatteringCase.case_iii()
        coup = derive_couplings(case, params)
        n_atoms = 1.0e4
        grid = SpatialGrid(128, default_grid(n_atoms, coup.u1d_aa, params).extent)
        psi0 = ground_state(grid, n_atoms, coup.u1d_aa, params, tol=1e-8)
        omega_r = calibrate_omega_r(psi0, grid, params, coup, math.pi / 2,
                                    t_span=10e-3, n_samples=40)
        assert abs(omega_r) > 1.0  # rad/s, clearly nonzero drift
        from twistturn.gpe import beamsplitter_pair
        pair = beamsplitter_pair(
            FieldPair(grid, psi0.astype(complex), np.zeros_like(psi0, complex)),
            math.pi / 2)
        ts = np.linspace(1e-3, 10e-3, 30)
        ser = evolve_gpe(pair, coup, 0.0, omega_r, None, ts, params)
        ov = np.sum(np.conj(ser.psi_a) * ser.psi_b, axis=1) * grid.spacing
        phase = np.unwrap(np.angle(ov))
        resid_slope = np.polyfit(ts, phase, 1)[0]
        assert abs(resid_slope) < 0.05 * abs(omega_r)


class TestAccumulatorIo:
    def test_roundtrip(self, tiny_config, tmp_path):
        acc = run_ensemble(tiny_config)
        path = tmp_path / "dump.bin"
        save_accumulators(acc, path)
        back = load_accumulators(path)
        for name in ("times", "j_x", "j_y", "j_z", "n_tot", "overlap",
                     "norm_a", "norm_b"):
            assert np.array_equal(getattr(acc, name), getattr(back, name))
        assert back.n_points == acc.n_points
        assert back.omega == acc.omega

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not an accumulator dump at all")
        with pytest.raises(ValueError, match="magic"):
            load_accumulators(path)

    def test_identical_bytes_for_identical_runs(self, tiny_config, tmp_path):
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_accumulators(run_ensemble(tiny_config, workers=1), p1)
        save_accumulators(run_ensemble(tiny_config, workers=2), p2)
        assert p1.read_bytes() == p2.read_bytes()
