"""ctrlab: a numerical laboratory for optimistic model-based control of SDEs.

Core pieces: a fixed-step Euler-Maruyama engine over controlled Ito dynamics
(:mod:`ctrlab.sde`), a noisy measurement oracle with pluggable in-episode
time samplers (:mod:`ctrlab.measurement`), least-squares version spaces with
explicit confidence radii (:mod:`ctrlab.function_classes`), exhaustive
optimistic planning (:mod:`ctrlab.planner`), the episode-loop learners
(:mod:`ctrlab.pure`), analytically tractable benchmark environments
(:mod:`ctrlab.environments`), and executable property suites
(:mod:`ctrlab.verify`) behind the ``ctrlab`` command line.
"""

__version__ = "0.1.0"

from .sde import (  # noqa: F401
    DynamicsSpec,
    InitialDistribution,
    IntegrationBlowupError,
    LipschitzConstants,
    Policy,
    Trajectory,
    estimate_return,
    euler_maruyama_step,
    simulate_trajectory,
    trajectory_to_csv,
)
from .measurement import (  # noqa: F401
    Measurement,
    MeasurementOracleConfig,
    SamplerSpec,
    draw_measurement_times,
    estimate_independency_coefficient,
    observe,
    ou_conditional_second_moment,
    ou_second_moment,
    ou_second_moment_averaged,
)
from .function_classes import (  # noqa: F401
    ConfidenceRadii,
    Dataset,
    FiniteClass,
    LinearDriftClass,
    LinearRewardClass,
    compute_radii,
    confidence_set,
    eluder_greedy_estimate,
    empirical_loss_drift,
    empirical_loss_reward,
    erm_fit,
)
from .planner import (  # noqa: F401
    CandidateGrid,
    OptimalityOracle,
    OptimisticChoice,
    PlannerStarvationError,
    exact_optimal,
    optimistic_plan,
)
from .pure import (  # noqa: F401
    RunConfig,
    RunLog,
    ScheduleSpec,
    run_pure_base,
    run_pure_low_rollout,
    run_pure_low_switch,
    run_schedule_variant,
)
from .environments import (  # noqa: F401
    CATALOG,
    EnvCatalogEntry,
    make_deterministic_1d,
    make_env,
    make_linear_gaussian,
    make_ou,
)
