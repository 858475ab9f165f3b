import math

import numpy as np
import pytest

from twistturn import DerivedCouplings, ScatteringCase, derive_couplings
from twistturn.errors import ConvergenceError, StepSizeError
from twistturn.gpe import (
    FieldPair,
    SpatialGrid,
    beamsplitter_pair,
    default_grid,
    default_time_step,
    density_overlap,
    energy_total,
    evolve_gpe,
    ground_state,
    harmonic_hamiltonian,
    rms_width,
    thomas_fermi_radius,
)

NO_COUPLING = DerivedCouplings(u_aa=0, u_bb=0, u_ab=0, u1d_aa=0, u1d_bb=0, u1d_ab=0)


@pytest.fixture(scope="module")
def case_i_setup(params):
    coup = derive_couplings(ScatteringCase.case_i(), params)
    n_atoms = 2.0e4
    grid = default_grid(n_atoms, coup.u1d_aa, params)
    psi0 = ground_state(grid, n_atoms, coup.u1d_aa, params, tol=1e-9)
    return coup, n_atoms, grid, psi0


class TestSpatialGrid:
    def test_geometry(self):
        g = SpatialGrid(n_points=256, extent=1e-5)
        assert g.spacing * g.n_points == pytest.approx(2 * g.extent)
        assert g.x[0] == pytest.approx(-g.extent)
        assert g.x[-1] == pytest.approx(g.extent - g.spacing)

    def test_wavenumbers_differentiate(self):
        # spectral derivative of a plane-wave mode is exact
        g = SpatialGrid(n_points=128, extent=2.0)
        k0 = 2 * math.pi / g.extent
        f = np.exp(1j * k0 * g.x)
        df = np.fft.ifft(1j * g.wavenumbers * np.fft.fft(f))
        assert np.max(np.abs(df - 1j * k0 * f)) < 1e-10

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            SpatialGrid(n_points=300, extent=1.0)


class TestGroundState:
    def test_harmonic_limit_energy(self, params):
        grid = SpatialGrid(512, 10 * params.oscillator_length())
        psi = ground_state(grid, 100.0, 0.0, params, tol=1e-10)
        f = FieldPair(grid, psi.astype(complex), np.zeros_like(psi, complex))
        e = energy_total(f, NO_COUPLING, 0.0, params) / 100.0
        assert e == pytest.approx(0.5 * params.hbar * params.trap_omega_x, rel=1e-6)

    def test_harmonic_limit_width(self, params):
        grid = SpatialGrid(512, 10 * params.oscillator_length())
        psi = ground_state(grid, 100.0, 0.0, params, tol=1e-10)
        # density std of the oscillator ground state is l_ho / sqrt(2)
        width = rms_width(psi.astype(complex), grid)
        assert width == pytest.approx(params.oscillator_length() / math.sqrt(2),
                                      rel=1e-6)

    def test_thomas_fermi_profile(self, params):
        coup = derive_couplings(ScatteringCase.case_i(), params)
        n_atoms = 1.0e5
        grid = default_grid(n_atoms, coup.u1d_aa, params)
        psi = ground_state(grid, n_atoms, coup.u1d_aa, params, tol=1e-9)
        mu = (0.75 * n_atoms * coup.u1d_aa
              * math.sqrt(0.5 * params.mass * params.trap_omega_x**2)) ** (2 / 3)
        v = harmonic_hamiltonian(grid, params).potential
        n_tf = np.maximum(0.0, (mu - v) / coup.u1d_aa)
        interior = v < 0.64 * mu  # |x| < 0.8 R_TF, away from the edges
        err = math.sqrt(np.sum((psi**2 - n_tf)[interior] ** 2)
                        / np.sum(n_tf[interior] ** 2))
        assert err < 0.02

    def test_norm_equals_atom_number(self, case_i_setup, params):
        _, n_atoms, grid, psi0 = case_i_setup
        assert np.sum(psi0**2) * grid.spacing == pytest.approx(n_atoms, rel=1e-12)

    def test_grid_doubling_invariance(self, params):
        coup = derive_couplings(ScatteringCase.case_i(), params)
        n_atoms = 1.0e4
        extent = default_grid(n_atoms, coup.u1d_aa, params).extent
        psi_a = ground_state(SpatialGrid(256, extent), n_atoms, coup.u1d_aa,
                             params, tol=1e-9)
        psi_b = ground_state(SpatialGrid(512, extent), n_atoms, coup.u1d_aa,
                             params, tol=1e-9)
        assert np.max(np.abs(psi_b[::2] ** 2 - psi_a**2)) / np.max(psi_a**2) < 1e-6

    def test_convergence_failure_reports_residual(self, params):
        grid = SpatialGrid(64, 10 * params.oscillator_length())
        with pytest.raises(ConvergenceError) as err:
            ground_state(grid, 100.0, 0.0, params, tol=1e-14, max_iter=3)
        assert err.value.residual is not None


class TestEvolution:
    def test_ground_state_is_stationary(self, case_i_setup, params):
        coup, _, grid, psi0 = case_i_setup
        fields = FieldPair(grid, psi0.astype(complex), np.zeros_like(psi0, complex))
        ser = evolve_gpe(fields, coup, 0.0, 0.0, None, [5e-3, 10e-3], params)
        drift = np.max(np.abs(np.abs(ser.psi_a[-1]) ** 2 - psi0**2)) / np.max(psi0**2)
        assert drift < 1e-6

    def test_norm_conservation(self, case_i_setup, params):
        coup, _, grid, psi0 = case_i_setup
        split = beamsplitter_pair(
            FieldPair(grid, psi0.astype(complex), np.zeros_like(psi0, complex)),
            math.pi / 2)
        ser = evolve_gpe(split, coup, 0.0, 0.0, None, [10e-3], params)
        na0, nb0 = split.norms()
        na1, nb1 = ser.at(-1).norms()
        # Omega = 0: each component conserved separately
        assert na1 == pytest.approx(na0, rel=1e-9)
        assert nb1 == pytest.approx(nb0, rel=1e-9)

    def test_energy_conservation(self, case_i_setup, params):
        coup, _, grid, psi0 = case_i_setup
        split = beamsplitter_pair(
            FieldPair(grid, psi0.astype(complex), np.zeros_like(psi0, complex)),
            math.pi / 2)
        omega = 60.0
        ser = evolve_gpe(split, coup, omega, 0.0, None, np.linspace(2e-3, 20e-3, 6),
                         params)
        e0 = energy_total(split, coup, omega, params)
        for k in range(len(ser.times)):
            e = energy_total(ser.at(k), coup, omega, params)
            assert e == pytest.approx(e0, rel=1e-7)

    def test_time_reversal(self, case_i_setup, params):
        coup, n_atoms, grid, psi0 = case_i_setup
        split = beamsplitter_pair(
            FieldPair(grid, psi0.astype(complex), np.zeros_like(psi0, complex)),
            math.pi / 2)
        t = 4e-3
        fwd = evolve_gpe(split, coup, 40.0, 0.0, None, [t], params).at(0)
        # conjugation reverses the flow for this real Hamiltonian
        back = evolve_gpe(FieldPair(grid, np.conj(fwd.psi_a), np.conj(fwd.psi_b)),
                          coup, 40.0, 0.0, None, [t], params).at(0)
        err_a = np.sqrt(np.sum(np.abs(np.conj(back.psi_a) - split.psi_a) ** 2)
                        * grid.spacing / n_atoms)
        assert err_a < 1e-8

    def test_case_i_components_stay_identical(self, params):
        coup = derive_couplings(ScatteringCase.case_i(), params)
        n_atoms = 2.0e4
        grid = default_grid(n_atoms, coup.u1d_aa, params)
        psi0 = ground_state(grid, n_atoms, coup.u1d_aa, params, tol=1e-9)
        split = beamsplitter_pair(
            FieldPair(grid, psi0.astype(complex), np.zeros_like(psi0, complex)),
            math.pi / 2)
        ser = evolve_gpe(split, coup, 0.0, 0.0, None,
                         np.linspace(4e-3, 20e-3, 5), params)
        for k in range(len(ser.times)):
            assert density_overlap(ser.at(k)) > 0.9999

    def test_rejects_unresolved_step(self, case_i_setup, params):
        coup, _, grid, psi0 = case_i_setup
        fields = FieldPair(grid, psi0.astype(complex), np.zeros_like(psi0, complex))
        with pytest.raises(StepSizeError):
            evolve_gpe(fields, coup, 0.0, 0.0, 1.0, [2.0], params)

    def test_default_time_step_policy(self, params):
        grid = SpatialGrid(512, 3e-5)
        dt = default_time_step(grid, params)
        k_max = math.pi / grid.spacing
        assert params.hbar * k_max**2 / (2 * params.mass) * dt <= 0.1 + 1e-12


class TestDiagnostics:
    def test_overlap_of_proportional_fields(self):
        grid = SpatialGrid(128, 1.0)
        psi = np.exp(-grid.x**2 / 0.02).astype(complex)
        f = FieldPair(grid, psi, (0.3 - 0.4j) * psi)
        assert density_overlap(f) == pytest.approx(1.0, abs=1e-12)

    def test_overlap_disjoint(self):
        grid = SpatialGrid(256, 1.0)
        a = np.where(grid.x > 0.2, 1.0, 0.0).astype(complex)
        b = np.where(grid.x < -0.2, 1.0, 0.0).astype(complex)
        assert density_overlap(FieldPair(grid, a, b)) == 0.0

    def test_overlap_separated_gaussians(self):
        sigma = 0.05
        grid = SpatialGrid(1024, 1.0)
        a = np.exp(-((grid.x - sigma / 2) ** 2) / (4 * sigma**2)).astype(complex)
        b = np.exp(-((grid.x + sigma / 2) ** 2) / (4 * sigma**2)).astype(complex)
        assert density_overlap(FieldPair(grid, a, b)) == pytest.approx(
            math.exp(-0.125), rel=1e-6)

    def test_overlap_rejects_empty_component(self):
        grid = SpatialGrid(64, 1.0)
        psi = np.exp(-grid.x**2).astype(complex)
        with pytest.raises(ValueError):
            density_overlap(FieldPair(grid, psi, np.zeros_like(psi)))

    def test_rms_width_of_gaussian(self):
        grid = SpatialGrid(1024, 1.0)
        sigma = 0.07
        psi = np.exp(-grid.x**2 / (4 * sigma**2)).astype(complex)
        assert rms_width(psi, grid) == pytest.approx(sigma, rel=1e-6)

    def test_thomas_fermi_radius_scaling(self, params):
        r1 = thomas_fermi_radius(1e4, 1e-41, params)
        r2 = thomas_fermi_radius(8e4, 1e-41, params)
        assert r2 / r1 == pytest.approx(2.0, rel=1e-12)  # R ~ N^(1/3)
