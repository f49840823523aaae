"""Numerical laboratory for dispersion-penalized (wavefunction-energy)
nonlinear Schrodinger dynamics: spin measurement toy model, operator
admissibility checks, and mean-field wavefunction ensembles."""

__version__ = "0.1.0"

from .states import (
    GridState,
    OperatorFamily,
    SpinState,
    SymmetricState,
    build_cat_state,
    build_initial_toy,
    build_momentum_cat,
    build_mqp_state,
    embed_symmetric,
    load_state,
    norm_and_inner,
    project_symmetric,
    save_state,
)
from .observables import (
    ObservableReport,
    classical_force_gap,
    com_and_momentum,
    dispersion,
    energies,
    macro_estimate,
    magnetization,
    make_report,
    well_occupations,
)
from .dynamics import (
    IntegrationError,
    ModelSpec,
    SensitivityResult,
    TrajectoryRecord,
    evolve,
    rhs,
    sensitivity_run,
    wfe_gradient,
)
from .toymodel import ToyParams, cat_sweep, run_measurement, toy_hamiltonian_apply, toy_laplacian
from .ensembles import (
    EnsembleEstimate,
    EnsembleParams,
    estimate_m2,
    exact_m2_small_n,
    f_value,
    m_and_D,
    magnetization_curve,
    sample_phi,
)
from .admissibility import (
    ANOMALY_PREFACTOR,
    ConstraintReport,
    OperatorSet,
    anomaly_F,
    build_G,
    check_com_momentum,
    check_com_position,
    check_spin_sector,
    run_admissibility,
)
