"""Opinion dynamics under a deceiving agent: microscopic receding-horizon
control, sparse predictive control, binary-interaction Monte Carlo and the
quasi-invariant Fokker-Planck limit, with their closed-form oracles."""

from .core import (
    BoundViolationError,
    ClassicPenalty,
    ConsistencyPenalty,
    ConstantKernel,
    DEFAULT_INTERVAL,
    FixedPointDivergedError,
    HardBoundedKernel,
    InvalidSpeedupError,
    LiarSpec,
    NoRegularisation,
    NotDifferentiableError,
    OpinionInterval,
    OpinionState,
    QuadraticDiffusion,
    SelfDependentKernel,
    SmoothedBoundedKernel,
    SparsePenalty,
    StabilityViolationError,
    StateEscapedIntervalError,
    TimeConsistencyPenalty,
    TrivialReachError,
    VariantTimeConsistencyPenalty,
    ZeroDiffusion,
    eval_influence_dy,
    eval_kernel,
    hk_drift,
    project_interval,
)
from .micro import (
    ControlRecord,
    MicroConfig,
    Trajectory,
    control_bounded_confidence,
    control_classic,
    control_consistent,
    control_no_reg,
    control_time_consistent,
    control_variant_tc,
    simulate_micro,
    step_micro,
)
from .analysis import (
    KineticParams,
    TwoParticleParams,
    half_life,
    mean_const_p,
    multi_liar_mean_limit,
    nu_for_speedup,
    nu_tilde,
    oscillation_threshold,
    prop1_nu_bound,
    quasi_mean_rate,
    steady_state_const_p,
    steady_state_quad_p,
)
from .nmpc import (
    LieMagnitudeMatrix,
    NmpcConfig,
    PsoParams,
    horizon_cost,
    nmpc_simulate,
    pso_minimize,
    sparsity_metrics,
)
from .kinetic_mc import (
    McConfig,
    McResult,
    NoiseBounds,
    mc_run,
    noise_bounds,
    sample_noise,
    tl_interaction,
    tt_interaction,
)
from .fokker_planck import (
    ControlCurve,
    DensityGrid,
    FpConfig,
    FpLiar,
    FpResult,
    control_curve,
    density_moments,
    fv_solve,
    fv_step,
    g_residual,
)

__version__ = "0.1.0"
