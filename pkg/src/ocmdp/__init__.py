"""Online control of weakly coupled constrained MDPs with virtual queues."""

from .controller import (
    ControllerParams,
    ControllerState,
    LemmaChecker,
    compute_weights,
    controller_step,
    decide,
    init_controller,
    observe,
    queue_update,
    run_slot,
)
from .errors import (
    ChainError,
    ConfigurationError,
    ConvergenceError,
    DimensionError,
    InvariantViolation,
    LpNumericalError,
    ModelValidationError,
    NotUnichainError,
    OcmdpError,
    ScenarioError,
    SequencingError,
)
from .harness import (
    RunRecord,
    SweepResult,
    benchmark,
    compute_regret,
    fit_slope,
    run_experiment,
    sweep_horizons,
    verify_suite,
)
from .lp import (
    LinearProgram,
    LpSolution,
    best_stationary,
    perturbation_gap_check,
    relaxed_stationary,
    solve_lp,
    theory_constants,
)
from .mdp import (
    MdpModel,
    MixingEstimate,
    check_unichain,
    mixing_contraction_check,
    policy_to_theta,
    policy_transition_matrix,
    sample_next_state,
    stationary_distribution,
    theta_to_policy,
)
from .projection import PolyhedronSpec, ProjectionReport, build_polyhedron, project_simplex, project_theta
from .scenario import (
    FunctionSample,
    Scenario,
    ScenarioConfig,
    SlaterCertificate,
    build_scenario,
    certify_slater,
    datacenter_scenario,
    generate_unichain_mdp,
    load_scenario,
    reference_config,
    sample_functions,
    save_scenario,
)

__version__ = "0.1.0"
