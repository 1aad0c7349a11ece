"""Tabular constrained-MDP optimization toolkit.

Fast primal-dual mirror-descent solvers (exact, zero-violation, and
sample-based), projected primal-dual and rectified-primal baselines, an exact
occupancy-measure LP solver, and a reproducible experiment harness.
"""

from .baselines import BaselineConfig, run_crpo, run_npg_pd
from .exact import EvalBundle, VisitationDistribution, policy_value, regularized_value, visitation
from .history import RunHistory, StepRecord, write_history_csv
from .lp import GroundTruth, dual_bisection, slater_margin, solve_lp
from .metrics import MetricSeries, SlopeFit, compute_metrics, loglog_slope
from .model import (
    CmdpModel,
    MaxFormSpec,
    ModelError,
    RandomCmdpSpec,
    from_max_form,
    generate_random,
    generate_random_max_form,
    read_model,
    validate,
    write_model,
)
from .pmdpd import (
    DualState,
    LemmaViolation,
    PmdPdConfig,
    dual_update,
    init_dual,
    inner_loop,
    modified_cost,
    pessimism_b,
    run_pmd_pd,
    run_pmd_pd_zero,
    theorem_params,
)
from .policies import (
    TabularPolicy,
    expected_kl,
    npg_entropy_step,
    npg_step,
    pseudo_kl,
    pushback_check,
    uniform_policy,
)
from .sampling import (
    SampleConfig,
    ScheduleConstants,
    Trajectory,
    estimate_q_reg,
    estimate_v,
    run_pmd_pd_a,
    sample_trajectory,
    schedule_params,
)

__version__ = "0.1.0"
