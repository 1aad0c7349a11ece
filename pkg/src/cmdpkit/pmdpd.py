"""Fast primal-dual solver: entropy-regularized NPG inner loops driven by a
modified Lagrangian, with rectified dual updates.

Each macro step k builds the cost

    c~_k = c0 + sum_i (lambda_k_i + eta' * V_i(pi_k)) * c_i,

runs t_k regularized NPG steps on its KL-regularized value (anchored at the
current policy), then applies the rectified dual update

    lambda_{k+1,i} = max(-eta' * V_i(pi_{k+1}), lambda_k_i + eta' * V_i(pi_{k+1})),

which keeps the multipliers nonnegative without needing a projection radius.
The update's structural inequalities are asserted at every step; a run aborts
(or warns, for estimated values) the moment one fails.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .exact import EvalBundle, EvaluationError, policy_value, regularized_value
from .history import RunHistory, StepRecord
from .model import CmdpModel
from .policies import ParameterError, TabularPolicy, npg_entropy_step, uniform_policy

# Absolute slack for structural inequalities that hold exactly in real
# arithmetic; double rounding on O(1)-O(100) quantities stays far below this.
CHECK_SLACK = 1e-9


class LemmaViolation(RuntimeError):
    """A structural inequality of the dual update failed at runtime."""


class ConfigurationError(ValueError):
    """Raised for inconsistent run configurations."""


def _check(ok: bool, message: str, mode: str) -> None:
    if ok:
        return
    if mode == "warn":
        warnings.warn(message, RuntimeWarning, stacklevel=3)
    else:
        raise LemmaViolation(message)


@dataclass(frozen=True)
class DualState:
    """Multipliers plus the cached constraint values of the anchor policy."""

    lam: np.ndarray
    eta_prime: float
    cached_v: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=np.float64)
        cached = np.asarray(self.cached_v, dtype=np.float64)
        if lam.shape != cached.shape:
            raise ConfigurationError("lambda and cached values must have equal length")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "cached_v", cached)

    def lambda_sum(self) -> float:
        return float(self.lam.sum())


@dataclass(frozen=True)
class PmdPdConfig:
    """Run configuration.

    ``alpha``, ``eta``, and ``inner_schedule`` accept the literal string
    "theorem" to derive them from the discount, the number of constraints,
    and the dual step size; any of them may instead be fixed numerically
    (the experiment setting is ``eta=1, inner_schedule=1``).
    """

    macro_steps: int
    eta_prime: float = 1.0
    alpha: float | str = "theorem"
    eta: float | str = "theorem"
    inner_schedule: int | str = "theorem"
    pessimism_delta: float = 0.0
    xi: float | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.macro_steps < 1:
            raise ConfigurationError(f"macro_steps must be >= 1: got {self.macro_steps}")
        if not (0.0 < self.eta_prime <= 1.0):
            raise ConfigurationError(f"eta_prime must lie in (0, 1]: got {self.eta_prime}")
        if self.pessimism_delta < 0.0:
            raise ConfigurationError("pessimism_delta must be nonnegative")
        if (
            self.pessimism_delta > 0.0
            and self.xi is not None
            and self.pessimism_delta >= self.xi
        ):
            raise ConfigurationError(
                f"pessimism_delta {self.pessimism_delta} must stay below xi {self.xi}"
            )
        for name in ("alpha", "eta", "inner_schedule"):
            value = getattr(self, name)
            if isinstance(value, str) and value != "theorem":
                raise ConfigurationError(f"{name} must be a number or 'theorem'")


@dataclass(frozen=True)
class TheoremParams:
    alpha: float
    eta: float
    t_k: int
    c_k: float


def theorem_params(
    model: CmdpModel, eta_prime: float, macro_steps: int, lambda_sum: float
) -> TheoremParams:
    """Step sizes and inner-loop length that realize the O(log K / K) rate.

    With c = cost_scale:

        alpha = 2 gamma^2 m eta' c^2 / (1-gamma)^3,   eta = (1-gamma) / alpha,
        C_k   = 2 gamma (c (1 + sum_i lambda_i) / (1-gamma) + m eta' c^2 / (1-gamma)^2),
        t_k   = ceil(max(log(3 K C_k) / (1-gamma), 1)).

    C_k bounds the sup-norm distance between the regularized action values of
    the anchor policy and the inner optimum, and eta*alpha = 1-gamma makes the
    inner loop contract by gamma per step, so t_k steps leave at most 1/K
    suboptimality.
    """
    m = model.num_constraints
    if m < 1:
        raise ParameterError("theorem parameters require at least one constraint")
    gamma = model.gamma
    scale = model.cost_scale
    one_minus = 1.0 - gamma
    alpha = 2.0 * gamma**2 * m * eta_prime * scale**2 / one_minus**3
    eta = one_minus / alpha
    c_k = 2.0 * gamma * (
        scale * (1.0 + lambda_sum) / one_minus + m * eta_prime * scale**2 / one_minus**2
    )
    t_k = max(1, math.ceil(math.log(3.0 * macro_steps * c_k) / one_minus))
    return TheoremParams(alpha=alpha, eta=eta, t_k=t_k, c_k=c_k)


def modified_cost(model: CmdpModel, dual: DualState) -> tuple[np.ndarray, float]:
    """Inner-loop cost c0 + sum_i (lambda_i + eta' * cached_v_i) c_i.

    Also returns the a-priori bound
    cost_scale * (1 + sum_i lambda_i + m eta' cost_scale / (1-gamma)) on its
    magnitude, for downstream contraction constants.
    """
    weights = dual.lam + dual.eta_prime * dual.cached_v
    if model.num_constraints:
        cost = model.objective_cost + np.einsum(
            "i,isa->sa", weights, model.constraint_costs
        )
    else:
        cost = model.objective_cost.copy()
    scale = model.cost_scale
    bound = scale * (
        1.0
        + dual.lambda_sum()
        + model.num_constraints * dual.eta_prime * scale / (1.0 - model.gamma)
    )
    return cost, bound


def init_dual(
    model_or_values, eta_prime: float, *, mode: str = "raise"
) -> DualState:
    """Initial multipliers lambda_0_i = max(0, -eta' * V_i(pi_0)).

    Accepts either a model (the uniform policy is evaluated exactly) or a
    vector of constraint values (exact or estimated).
    """
    if isinstance(model_or_values, CmdpModel):
        model = model_or_values
        pi0 = uniform_policy(model.num_states, model.num_actions)
        values = np.array(
            [policy_value(model, pi0, c).v_rho for c in model.constraint_costs]
        )
    else:
        values = np.asarray(model_or_values, dtype=np.float64)
    lam = np.maximum(0.0, -eta_prime * values)
    _check(
        bool(np.all(np.abs(lam) <= np.abs(eta_prime * values) + CHECK_SLACK)),
        "initial multipliers exceed |eta' * V| at start",
        mode,
    )
    return DualState(lam=lam, eta_prime=eta_prime, cached_v=values)


def dual_update(dual: DualState, v_new: np.ndarray, *, mode: str = "raise") -> DualState:
    """Rectified dual ascent; asserts its three structural properties.

    For every i: the new multiplier is nonnegative, the modified multiplier
    lambda_i + eta' * v_i is nonnegative, and |lambda_i| >= |eta' * v_i|.
    """
    v_new = np.asarray(v_new, dtype=np.float64)
    eta_prime = dual.eta_prime
    lam_new = np.maximum(-eta_prime * v_new, dual.lam + eta_prime * v_new)
    _check(bool(np.all(lam_new >= -CHECK_SLACK)), "negative multiplier after update", mode)
    _check(
        bool(np.all(lam_new + eta_prime * v_new >= -CHECK_SLACK)),
        "modified multiplier lambda + eta' * V is negative",
        mode,
    )
    _check(
        bool(np.all(np.abs(lam_new) >= np.abs(eta_prime * v_new) - CHECK_SLACK)),
        "|lambda| fell below |eta' * V| after an update",
        mode,
    )
    return DualState(lam=lam_new, eta_prime=eta_prime, cached_v=v_new.copy())


def _check_dual_progress(
    lam_old: np.ndarray,
    lam_new: np.ndarray,
    v_new: np.ndarray,
    eta_prime: float,
    k: int,
    mode: str,
) -> None:
    # <lambda_k, V(pi_{k+1})> >= (||lambda_{k+1}||^2 - ||lambda_k||^2) / (2 eta')
    #                            - eta' ||V(pi_{k+1})||^2
    lhs = float(lam_old @ v_new)
    rhs = (float(lam_new @ lam_new) - float(lam_old @ lam_old)) / (2.0 * eta_prime)
    rhs -= eta_prime * float(v_new @ v_new)
    slack = CHECK_SLACK * max(1.0, abs(lhs), abs(rhs))
    _check(
        lhs >= rhs - slack,
        f"dual progress inequality failed at macro step {k}: {lhs:.12g} < {rhs:.12g}",
        mode,
    )


def lambda_norm_bound(
    model: CmdpModel, eta_prime: float, alpha: float, lambda_star_norm: float
) -> float:
    """Uniform bound on ||lambda_k|| in terms of the optimal dual norm."""
    gamma = model.gamma
    m = model.num_constraints
    scale = model.cost_scale
    inner = lambda_star_norm**2 + 2.0 * eta_prime * (
        alpha * math.log(model.num_actions) / (1.0 - gamma)
        + 1.0
        + 2.0 / (3.0 * (1.0 - gamma))
        + m * eta_prime * scale**2 / (1.0 - gamma) ** 2
    )
    return lambda_star_norm + math.sqrt(inner)


def inner_loop(
    model: CmdpModel,
    pi_k: TabularPolicy,
    dual: DualState,
    alpha: float,
    eta: float,
    t_k: int,
    q_source: Callable[[int, TabularPolicy], np.ndarray] | None = None,
) -> TabularPolicy:
    """Run t_k regularized NPG steps anchored at pi_k.

    ``q_source(t, pi)`` must return the KL-regularized action values of ``pi``
    against the anchor under the modified cost; the default evaluates them
    exactly.  With exact values and the theorem schedule, the returned policy
    is within 1/K of the inner optimum in regularized value.
    """
    if q_source is None:
        cost, _ = modified_cost(model, dual)

        def q_source(_t: int, pi: TabularPolicy) -> np.ndarray:
            return regularized_value(model, pi, pi_k, cost, alpha).q

    pi = pi_k
    for t in range(t_k):
        q = q_source(t, pi)
        pi = npg_entropy_step(pi, q, alpha, eta, model.gamma)
    return pi


def solve_inner_optimum(
    model: CmdpModel,
    anchor: TabularPolicy,
    cost: np.ndarray,
    alpha: float,
    eta: float,
    tol: float = 1e-10,
    max_steps: int = 100_000,
) -> tuple[TabularPolicy, EvalBundle]:
    """Iterate the regularized NPG until the regularized value stalls.

    Linear convergence of the exact update makes this a cheap way to obtain
    the inner-loop optimum to within ``tol``; used by property tests and the
    pushback check.
    """
    pi = anchor
    bundle = regularized_value(model, pi, anchor, cost, alpha)
    for _ in range(max_steps):
        pi_next = npg_entropy_step(pi, bundle.q, alpha, eta, model.gamma)
        bundle_next = regularized_value(model, pi_next, anchor, cost, alpha)
        drift = float(np.abs(bundle_next.v - bundle.v).max())
        pi, bundle = pi_next, bundle_next
        if drift <= tol:
            return pi, bundle
    raise EvaluationError(f"inner optimum did not converge within {max_steps} steps")


def _resolve_step_sizes(
    model: CmdpModel, config: PmdPdConfig
) -> tuple[float, float]:
    """Turn the (alpha, eta) configuration into numbers, preserving
    eta * alpha = 1 - gamma whenever one of them is left to the theorem."""
    alpha, eta = config.alpha, config.eta
    if alpha == "theorem" and eta == "theorem":
        params = theorem_params(model, config.eta_prime, config.macro_steps, 0.0)
        return params.alpha, params.eta
    if alpha == "theorem":
        return (1.0 - model.gamma) / float(eta), float(eta)
    if eta == "theorem":
        return float(alpha), (1.0 - model.gamma) / float(alpha)
    return float(alpha), float(eta)


def run_pmd_pd(
    model: CmdpModel,
    config: PmdPdConfig,
    eval_oracle: Callable[[TabularPolicy, np.ndarray], float] | None = None,
    *,
    lambda_star: np.ndarray | None = None,
    assertion_mode: str = "raise",
) -> RunHistory:
    """Run the full solver for ``config.macro_steps`` macro steps.

    ``eval_oracle(policy, cost)`` supplies scalar start-weighted values for
    the dual update (exact by default); it must evaluate the cost matrix it
    is handed, which already carries any active pessimism shift.  When
    ``lambda_star`` is given and the theorem schedule is active, the uniform
    multiplier-norm bound is asserted at every step.  Constraint values are
    recorded in the original model's units even when a shift is active.
    """
    delta = config.pessimism_delta
    run_model = model.shifted_constraints(delta * (1.0 - model.gamma)) if delta else model
    if eval_oracle is None:
        def eval_oracle(policy: TabularPolicy, cost: np.ndarray) -> float:
            return policy_value(run_model, policy, cost).v_rho

    mode = assertion_mode
    theorem_schedule = config.inner_schedule == "theorem"
    alpha, eta = _resolve_step_sizes(run_model, config)

    pi = uniform_policy(run_model.num_states, run_model.num_actions)
    v_constraints = np.array(
        [eval_oracle(pi, c) for c in run_model.constraint_costs]
    )
    dual = init_dual(v_constraints, config.eta_prime, mode=mode)

    history = RunHistory(algorithm="pmd-pd" if not delta else "pmd-pd-zero")
    cumulative_inner = 0
    norm_cap = None
    if lambda_star is not None and theorem_schedule:
        norm_cap = lambda_norm_bound(
            run_model, config.eta_prime, alpha, float(np.linalg.norm(lambda_star))
        )

    for k in range(config.macro_steps):
        if theorem_schedule:
            t_k = theorem_params(
                run_model, config.eta_prime, config.macro_steps, dual.lambda_sum()
            ).t_k
        else:
            t_k = int(config.inner_schedule)
        pi_next = inner_loop(run_model, pi, dual, alpha, eta, t_k)
        v0 = eval_oracle(pi_next, run_model.objective_cost)
        v_new = np.array([eval_oracle(pi_next, c) for c in run_model.constraint_costs])
        new_dual = dual_update(dual, v_new, mode=mode)
        _check_dual_progress(dual.lam, new_dual.lam, v_new, config.eta_prime, k, mode)
        if norm_cap is not None:
            norm = float(np.linalg.norm(new_dual.lam))
            _check(
                norm <= norm_cap + CHECK_SLACK * max(1.0, norm_cap),
                f"multiplier norm {norm:.6g} exceeds its uniform bound {norm_cap:.6g} "
                f"at macro step {k}",
                mode,
            )
        cumulative_inner += t_k
        history.steps.append(
            StepRecord(
                k=k + 1,
                inner_steps=t_k,
                cumulative_inner=cumulative_inner,
                objective_value=v0,
                constraint_values=v_new - delta,
                duals=new_dual.lam.copy(),
            )
        )
        history.policies.append(pi_next.log_probs)
        pi, dual = pi_next, new_dual
    return history


def pessimism_b(
    xi: float,
    eta_prime: float,
    alpha: float,
    gamma: float,
    m: int,
    num_actions: int,
) -> float:
    """Tightening budget for the zero-violation mode (unit cost scale).

    The pessimism delta = b / K cancels the violation bound's 1/K constant
    once K >= 2 b / xi, at which point the running-average violation of the
    tightened run is guaranteed nonpositive in the original units.
    """
    if xi <= 0.0:
        raise ParameterError(f"xi must be positive: got {xi!r}")
    one_minus = 1.0 - gamma
    head = 4.0 / (xi * one_minus * eta_prime)
    radicand = (
        16.0 / (xi**2 * one_minus**2 * eta_prime**2)
        + 2.0 * alpha * math.log(num_actions) / (one_minus * eta_prime)
        + (2.0 / eta_prime) * (1.0 + 2.0 / (3.0 * one_minus))
        + 2.0 * m / one_minus**2
    )
    return head + math.sqrt(radicand)


def run_pmd_pd_zero(
    model: CmdpModel,
    config: PmdPdConfig,
    *,
    lambda_star: np.ndarray | None = None,
) -> RunHistory:
    """Zero-violation mode: solve the constraint-tightened problem.

    Costs are shifted so feasibility means V <= -delta with delta = b / K;
    the run then satisfies every original constraint on running average.  The
    Slater margin ``config.xi`` is required (compute it from the ground-truth
    module if unknown), and K must be at least 2 b / xi.
    """
    xi = config.xi
    if xi is None:
        from .lp import slater_margin

        xi = slater_margin(model)
    if not (xi > 0.0):
        raise ConfigurationError(
            f"zero-violation mode needs a strictly feasible model: margin {xi!r}"
        )
    params = theorem_params(model, config.eta_prime, config.macro_steps, 0.0)
    alpha = params.alpha if config.alpha == "theorem" else float(config.alpha)
    b = pessimism_b(
        xi, config.eta_prime, alpha, model.gamma, model.num_constraints, model.num_actions
    )
    required = 2.0 * b / xi
    if config.macro_steps < required - 1e-9:
        raise ConfigurationError(
            f"macro_steps={config.macro_steps} is below the zero-violation "
            f"threshold 2b/xi = {required:.6g}"
        )
    delta = b / config.macro_steps
    run_config = replace(config, pessimism_delta=delta, xi=xi)
    history = run_pmd_pd(model, run_config, lambda_star=lambda_star)
    history.algorithm = "pmd-pd-zero"
    final_avg = history.running_average_constraints()[-1]
    worst = float(final_avg.max()) if final_avg.size else 0.0
    if worst > 0.0:
        raise LemmaViolation(
            f"running-average violation {worst:.6g} is positive at termination "
            f"despite pessimism delta {delta:.6g}"
        )
    return history
