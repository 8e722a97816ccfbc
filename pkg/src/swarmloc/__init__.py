"""Swarm localization and tracking from quantized delay-Doppler channel
profiles: measurement synthesis, belief-propagation path assignment,
gradient-descent positioning, least-squares velocities, turbo iterative
refinement, and joint Cramer-Rao bounds."""

from .geometry import (
    DEFAULT_ANCHOR_POSITIONS,
    SPEED_OF_LIGHT,
    LissajousParams,
    ScenarioConfig,
    SwarmState,
    UavState,
    lissajous_state,
    lissajous_states,
    load_trace,
    sample_lissajous_params,
    sample_random_swarm,
    sample_scenario,
)
from .measurement import (
    AssignmentMaps,
    ChannelLists,
    MeasurementSet,
    OtfsGridConfig,
    build_measurements,
    load_measurements,
    quantize,
    radial_velocity,
    red_distance,
    save_measurements,
)
from .assignment_bp import (
    BpConfig,
    MarginalTensor,
    NoiseKernel,
    brute_force_maps,
    compute_marginals,
    estimate_maps,
    kernel_eval,
)
from .positioning import (
    GdConfig,
    GdResult,
    RestartResult,
    gd_minimize,
    gradient,
    noise_floor,
    solve_with_restarts,
    square_error,
)
from .velocity import VelocityDesign, build_design, estimate_velocities, velocity_triples
from .tip import (
    AnchorInfo,
    EstimationResult,
    TipConfig,
    apply_maps,
    compute_maps,
    ordered_velocity_vector,
    run_cold_start,
    run_genie_aided,
    run_tracking_step,
)
from .crlb import (
    CrlbConfig,
    FisherMatrix,
    JointCrlb,
    delta_position_jacobian,
    fisher_matrix,
    joint_crlb,
    omega_jacobians,
)
from .experiments import (
    ExperimentConfig,
    RunRecord,
    rmse_position,
    rmse_velocity,
    run_iteration_profile,
    run_sweep,
    run_tracking_demo,
)

__version__ = "0.1.0"
