"""Entanglement generation in two-component condensates.

Exact collective-spin dynamics, two-mode truncated-Wigner trajectories,
mean-field Gross-Pitaevskii evolution, and the multimode stochastic-field
ensemble, with spin-squeezing and quantum-Fisher-information observables
on top.
"""

__version__ = "0.1.0"

from .params import (
    ATOMIC_MASS_UNIT,
    BOHR_RADIUS,
    HBAR,
    CaseLabel,
    DerivedCouplings,
    PhysicalParams,
    ScatteringCase,
    breathe_together_ratio,
    chi_from_modes,
    derive_couplings,
    interaction_strength,
    mode_overlap,
)
from .observables import (
    MetrologyRecord,
    SpinMoments,
    metrology_record,
    phase_sensitivity,
    qfi,
    spin_moments_from_fields,
    spin_moments_from_two_mode,
    spin_moments_from_two_mode_series,
    squeezing_parameter,
)
from .dicke import (
    SingleModeHamiltonian,
    SpinState,
    build_hamiltonian,
    css_state,
    evolve,
    evolve_series,
    oat_mean_jx,
    q_function,
    spin_moments_exact,
)
from .two_mode import (
    TwoModeEnsemble,
    TwoModeSeries,
    beamsplitter_two_mode,
    evolve_two_mode,
    sample_initial_two_mode,
)
