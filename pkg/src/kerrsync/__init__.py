"""Kerr-oscillator Fock-state stabilization and synchronization toolkit."""

__version__ = "0.1.0"

from .qspace import (
    DensityMatrix,
    FockSpace,
    Operator,
    Superoperator,
    create,
    destroy,
    dissipator,
    embed,
    fock_dm,
    fock_ket,
    identity,
    liouvillian,
    number,
    partial_trace,
    partial_transpose,
    quadrature,
    spre,
    spost,
    sprepost,
    transition,
)
from .models import (
    CircuitParams,
    DisplacedFrame,
    EffectiveKerrParams,
    OscillatorParams,
    build_coupled_effective_model,
    build_displaced_model,
    build_effective_model,
    build_full_model,
    compute_displacements,
    effective_params_from,
    seed_linear_detunings,
    sideband_conditions,
)
from .evolve import (
    DegenerateSteadyStateError,
    LindbladModel,
    SmeEnsembleResult,
    SteadyState,
    TrajectoryAbort,
    TrajectoryRecord,
    evolve_me,
    sme_ensemble,
    sme_homodyne_trajectory,
    steady_state_direct,
    steady_state_trajectory_average,
)
from .measures import (
    PhaseDistribution,
    XCorrEnsemble,
    XCorrResult,
    cross_correlation,
    ensemble_xcorr,
    ensemble_xcorr_max,
    fock_fidelity,
    hinton_export,
    log_negativity,
    phase_coherence_sums,
    photon_distribution,
    relative_phase_distribution,
    sync_measure,
    wigner,
)
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .sweeps import (
    DetuningOptimum,
    SolverFailureRateError,
    convergence_check,
    optimize_detunings,
    run_homodyne_experiment,
    run_stabilize,
    run_sync_sweep,
)
