"""Downlink energy efficiency of spatially non-stationary XL-MIMO cells.

Simulates a user group whose channel is visible only on part of the base
station array, detects that visibility region from uplink pilot energy,
quantifies the detection errors, and evaluates / optimizes the downlink
average energy efficiency under RZF precoding for TDD and FDD operation.
Deterministic large-system approximations are cross-validated against a
built-in Monte-Carlo oracle.
"""

from .scenario import (
    ConfigError,
    CircuitPower,
    FddParams,
    SystemConfig,
    DEFAULTS,
    build_config,
    default_config,
    dbm_to_watt,
    parse_config_file,
    pathloss,
    watt_to_dbm,
)
from .vr_detect import (
    DetectorParams,
    ErrorProbs,
    OutcomeDistribution,
    detect,
    error_probs,
    outcome_distribution,
    p_false,
    p_miss,
    threshold_equal_error,
    threshold_min_sum,
)
from .channel import (
    EmptyVRError,
    FeedbackModel,
    correlated_observation,
    draw_channel,
    fdd_estimate_and_feedback,
    ls_estimate_tdd,
    random_visibility_region,
)
from .detequiv import (
    ConvergenceError,
    cb_limit_gamma,
    gamma_bar_fdd,
    gamma_bar_tdd,
    generic_trace_fixed_point,
    perfect_csi_gamma,
    solve_e_tdd,
    sum_rate_fdd,
    sum_rate_tdd,
)
from .precode_mc import (
    McEEReport,
    RateStats,
    calibrate_alpha,
    ergodic_rate,
    instantaneous_sinr,
    mc_average_ee,
    rzf_directions,
)
from .energy_ee import EEReport, ee_fdd_bar, ee_static_vr, ee_tdd_bar, p_cir
from .optimizer import (
    OptResult,
    alternate_optimize,
    opt_tau,
    opt_tau_d_perfect_vr,
    opt_threshold,
)

__version__ = "0.1.0"
