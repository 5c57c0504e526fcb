"""Robust monocular egomotion and inverse-depth estimation from optical flow.

The pipeline eliminates per-point depth from the instantaneous motion-field
model, leaving a residual in the translation direction and rotational
velocity alone, and layers two robustness mechanisms on top: per-point
confidence weights from empirical residual likelihoods, and joint weight
estimation under a lifted truncated-quadratic kernel.  A fast biased
closed-form baseline, a synthetic-experiment harness, and file/CLI plumbing
round out the package.
"""

from .erl import (
    B_MIN,
    ConfidenceWeights,
    GaussianFit,
    LaplacianFit,
    ModelSampleSet,
    erl_confidence_weights,
    fit_model_samples,
    gaussian_confidence_weights,
    gaussian_likelihood,
    gaussian_mle,
    laplacian_likelihood,
    laplacian_mle,
    scaled_residuals,
)
from .estimator import (
    ESTIMATORS,
    EgomotionEstimate,
    ErlConfig,
    EstimateDiagnostics,
    GridWinner,
    RefineResult,
    SolverConfig,
    estimate,
    estimate_erl,
    estimate_lifted,
    estimate_raw,
    gauss_newton_refine_t,
    grid_prune,
    hemisphere_grid,
    soatto_estimate,
)
from .exceptions import (
    CountMismatchError,
    DegeneratePointError,
    EgoflowError,
    EstimationError,
    FlowFileError,
    MalformedHeaderError,
    NearSingularCostError,
    NonFiniteValueError,
    SingularSystemError,
    ZeroMotionError,
)
from .flowio import (
    Intrinsics,
    atomic_write_text,
    parse_config_file,
    parse_flow_file,
    parse_intrinsics_file,
    solver_config_from_mapping,
    write_flow_file,
)
from .lifted import (
    LiftedConfig,
    LiftedJacobian,
    LiftedState,
    export_weights,
    kappa,
    lifted_jacobian,
    lifted_objective,
    lifted_residual,
    solve_lifted_inner,
)
from .motion_field import (
    FOE_EPS,
    OMEGA_COND_MAX,
    CameraMotion,
    FlowField,
    InverseDepths,
    PointBasis,
    ResidualVector,
    basis_matrices,
    canonical_direction,
    error_vector,
    perp_direction,
    point_basis,
    predict_flow,
    recover_depths,
    reduced_linear_system,
    rotational_flow,
    solve_omega_hat,
    translational_flow,
)
from .soatto import (
    SoattoPrecompute,
    assemble_cost_matrices,
    soatto_cost,
    soatto_precompute,
)
from .synth import (
    FOV_HALF_WIDTH,
    FitStudyRecord,
    LabeledFlowField,
    SceneConfig,
    SweepRecord,
    SweepResult,
    auc_score,
    gaussian_loglik,
    generate_scene,
    laplacian_loglik,
    likelihood_fit_study,
    rotation_error,
    run_outlier_sweep,
    translation_angular_error,
)

__version__ = "0.1.0"
