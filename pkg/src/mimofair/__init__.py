"""Max-min fair linear transceiver design for MIMO interfering broadcast
channels: core link math, alternating solver, baselines, hardness gadgets,
and a Monte Carlo experiment harness."""

__version__ = "0.1.0"

from .model import (
    BudgetError,
    ChannelSet,
    ConditioningError,
    ConfigError,
    CovarianceSet,
    FeasibilityError,
    ModelError,
    NetworkTopology,
    ShapeError,
    SolverError,
    TransceiverState,
    UserLinkStats,
    cell_powers,
    check_power_feasible,
    min_rate,
    mmse_receiver,
    mse_matrix,
    user_rate,
    weight_update,
    wmmse_surrogate_value,
)
from .qv import DualState, QvOptions, QvSolution, solve_qv, weighted_v_update
from .maxmin import (
    ChannelChange,
    KktReport,
    MaxminOptions,
    SolverTrace,
    UserJoin,
    initial_state,
    kkt_residuals,
    reinitialize_on_event,
    run_maxmin,
)
from .baselines import BaselineKind, run_baseline
from .hardness import (
    CnfFormula,
    FairnessPoint,
    IcInstance,
    brute_force_sat_check,
    build_3sat_instance,
    build_lemma1_network,
    build_lemma2_network,
    evaluate_assignment,
    f_value,
    verify_lemma1,
    verify_lemma2,
)
from .harness import (
    ExperimentResult,
    ScenarioConfig,
    generate_channels,
    load_config,
    run_dynamic,
    run_minrate_vs_snr,
    run_rate_cdf,
)
from .cli import cli_main
