"""Feedback capacity of Gaussian channels with ARMA noise."""

from .channel import ChannelModel, build_model, noise_autocovariance, noise_psd, step_channel
from .dp import (
    GridConfig,
    NBlockResult,
    ValueTable,
    calibrate_gamma,
    rollout,
    trajectory_optimize,
    value_iteration_scalar,
    value_iteration_solve,
)
from .errors import (
    BracketFailure,
    ChannelError,
    ConsistencyError,
    GridError,
    Infeasible,
    NonConvergent,
    NonStationaryPolicy,
    NonStationaryWarning,
    NoPositiveRoot,
    UnitCircleZeroWarning,
)
from .kalman import (
    PolicyStage,
    Posterior,
    cov_update,
    mean_update,
    riccati_fixed_point,
    riccati_residual,
    stationary_covariance,
)
from .rate import LOG2E, ShadowPrice, nats_to_bits, reward_omega, stage_power, stage_rate
from .sim import SimReport, simulate
from .stationary import (
    ButmanRate,
    FirstOrderResult,
    StationaryResult,
    butman_ar1_rate,
    first_order_quartic,
    first_order_rate,
    solve_stationary,
)
from .waterfill import WaterfillResult, feedforward_capacity, noise_cov_matrix, waterfill_capacity

__version__ = "0.1.0"
