"""Generative-model simulation, Monte-Carlo estimators, and the sample-based
primal-dual solver.

Estimators draw from counter-style substreams keyed on (macro step, inner
step, start state, start action): each estimator call owns a block of
uniforms whose row j is trajectory j's stream, so runs replay exactly from
the root seed.  All reductions are plain array sums over contiguous blocks
(numpy's pairwise order), keeping results independent of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exact import policy_value
from .history import RunHistory, StepRecord
from .model import CmdpModel
from .policies import ParameterError, TabularPolicy, uniform_policy
from .pmdpd import (
    ConfigurationError,
    dual_update,
    init_dual,
    inner_loop,
    modified_cost,
    theorem_params,
)

_TAG_V = 0
_TAG_Q = 1


@dataclass(frozen=True)
class ScheduleConstants:
    """Leading constants of the sample schedule; the analysis fixes only the
    orders, so each constant defaults to 1 and is configurable."""

    c_K: float = 1.0
    c_t: float = 1.0
    c_N: float = 1.0
    c_M: float = 1.0
    c_MQ: float = 1.0
    c_NQ: float = 1.0


@dataclass(frozen=True)
class SampleConfig:
    """Per-macro-step budgets evaluated at one multiplier bound.

    ``macro_steps`` (K) is fixed for the whole run, while the remaining
    budgets are re-derived each macro step from the running multiplier
    l1-norm via :func:`schedule_params`.
    """

    epsilon: float
    delta_conf: float
    macro_steps: int
    t_k: int
    m_v: int
    n_v: int
    m_q: int
    n_q: int
    delta_prime: float
    lambda_l1_bound: float = 1.0
    seed: int = 0
    constants: ScheduleConstants = field(default_factory=ScheduleConstants)

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0) or not (0.0 < self.delta_conf < 1.0):
            raise ConfigurationError("epsilon and delta_conf must lie in (0, 1)")
        for name in ("macro_steps", "t_k", "m_v", "n_v", "m_q", "n_q"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")


def schedule_params(
    epsilon: float,
    delta_conf: float,
    gamma: float,
    m: int,
    lambda_l1_bound: float = 1.0,
    macro_steps: int | None = None,
    constants: ScheduleConstants = ScheduleConstants(),
    seed: int = 0,
) -> SampleConfig:
    """Budgets delivering epsilon-accuracy with probability 1 - delta_conf.

    With L = max(1, lambda_l1_bound) and leading constants at their defaults:

        K    = ceil(1 / epsilon)
        t_k  = ceil(log(L / epsilon) / (1 - gamma))
        d'   = delta_conf / (K (t_k + 1))          (union bound over all estimates)
        N_V  = ceil(log(1 / epsilon) / log(1 / gamma))
        M_V  = ceil(log(1 / d') / epsilon^2)
        M_Q  = ceil((L + epsilon t_k) log(1 / d') / epsilon^2)
        N_Q  = ceil(log(L / epsilon) / log(1 / gamma))
    """
    if not (0.0 < epsilon < 1.0) or not (0.0 < delta_conf < 1.0):
        raise ConfigurationError("epsilon and delta_conf must lie in (0, 1)")
    if not (0.0 < gamma < 1.0):
        raise ParameterError("schedule requires gamma in (0, 1)")
    c = constants
    bound = max(1.0, lambda_l1_bound)
    if macro_steps is None:
        macro_steps = math.ceil(c.c_K / epsilon)
    t_k = max(1, math.ceil(c.c_t * math.log(bound / epsilon) / (1.0 - gamma)))
    delta_prime = delta_conf / (macro_steps * (t_k + 1))
    log_inv_gamma = math.log(1.0 / gamma)
    n_v = max(1, math.ceil(math.log(c.c_N / epsilon) / log_inv_gamma))
    m_v = max(1, math.ceil(c.c_M * math.log(1.0 / delta_prime) / epsilon**2))
    m_q = max(
        1,
        math.ceil(
            c.c_MQ * (bound + epsilon * t_k) * math.log(1.0 / delta_prime) / epsilon**2
        ),
    )
    n_q = max(1, math.ceil(math.log(c.c_NQ * bound / epsilon) / log_inv_gamma))
    return SampleConfig(
        epsilon=epsilon,
        delta_conf=delta_conf,
        macro_steps=macro_steps,
        t_k=t_k,
        m_v=m_v,
        n_v=n_v,
        m_q=m_q,
        n_q=n_q,
        delta_prime=delta_prime,
        lambda_l1_bound=bound,
        seed=seed,
        constants=constants,
    )


@dataclass(frozen=True)
class Trajectory:
    """Recorded rollout: aligned state/action sequences plus the objective and
    constraint costs at each visited pair."""

    states: np.ndarray
    actions: np.ndarray
    costs: np.ndarray  # (len, 1 + m): objective first

    def __len__(self) -> int:
        return len(self.states)


def _stream(root_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(root_seed), *map(int, key)]))


def _categorical_rows(prob_rows: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row; prob_rows is (M, K), uniforms is (M,)."""
    cumulative = np.cumsum(prob_rows, axis=1)
    idx = (cumulative < uniforms[:, None]).sum(axis=1)
    return np.minimum(idx, prob_rows.shape[1] - 1)


def _rollout_block(
    model: CmdpModel,
    policy: TabularPolicy,
    s0: np.ndarray,
    a0: np.ndarray,
    length: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``length`` state-action pairs for a batch of trajectories.

    Returns (states, actions) of shape (M, length).  Row j consumes row j of
    the uniform block, so each trajectory has its own replayable stream.
    """
    batch = len(s0)
    states = np.empty((batch, length), dtype=np.int64)
    actions = np.empty((batch, length), dtype=np.int64)
    if length == 0:
        return states, actions
    uniforms = rng.random((batch, max(0, length - 1), 2))
    probs = policy.probs
    s, a = np.asarray(s0), np.asarray(a0)
    states[:, 0] = s
    actions[:, 0] = a
    for step in range(1, length):
        s = _categorical_rows(model.transition[s, a], uniforms[:, step - 1, 0])
        a = _categorical_rows(probs[s], uniforms[:, step - 1, 1])
        states[:, step] = s
        actions[:, step] = a
    return states, actions


def sample_trajectory(
    model: CmdpModel,
    policy: TabularPolicy,
    start: tuple[int, int] | None,
    length: int,
    rng: np.random.Generator,
) -> Trajectory:
    """Roll out ``length`` transitions; the trajectory holds length+1 pairs.

    ``start`` fixes the first state-action pair; ``None`` draws the state
    from the model's start distribution and the action from the policy.
    """
    if start is None:
        u = rng.random(2)
        s0 = int(_categorical_rows(model.rho[None, :], u[:1])[0])
        a0 = int(_categorical_rows(policy.probs[s0][None, :], u[1:])[0])
    else:
        s0, a0 = int(start[0]), int(start[1])
    states, actions = _rollout_block(
        model, policy, np.array([s0]), np.array([a0]), length + 1, rng
    )
    states, actions = states[0], actions[0]
    costs = np.empty((length + 1, 1 + model.num_constraints))
    costs[:, 0] = model.objective_cost[states, actions]
    for i in range(model.num_constraints):
        costs[:, 1 + i] = model.constraint_costs[i][states, actions]
    return Trajectory(states=states, actions=actions, costs=costs)


def _estimate_values(
    model: CmdpModel,
    policy: TabularPolicy,
    costs: list[np.ndarray],
    num_trajectories: int,
    horizon: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Start-distribution Monte-Carlo values of several costs from one shared
    batch of trajectories."""
    u0 = rng.random((num_trajectories, 2))
    s0 = _categorical_rows(
        np.broadcast_to(model.rho, (num_trajectories, model.num_states)), u0[:, 0]
    )
    a0 = _categorical_rows(policy.probs[s0], u0[:, 1])
    states, actions = _rollout_block(model, policy, s0, a0, horizon, rng)
    discounts = model.gamma ** np.arange(horizon)
    out = np.empty(len(costs))
    for j, cost in enumerate(costs):
        per_step = cost[states, actions]
        out[j] = float((per_step @ discounts).sum() / num_trajectories)
    return out


def estimate_v(
    model: CmdpModel,
    policy: TabularPolicy,
    cost: np.ndarray,
    num_trajectories: int,
    horizon: int,
    rng: np.random.Generator,
) -> float:
    """Truncated discounted-cost estimate of V(rho) from M trajectories of
    horizon N; the truncation bias is at most max|cost| gamma^N / (1-gamma)."""
    if num_trajectories < 1 or horizon < 1:
        raise ParameterError("num_trajectories and horizon must be positive")
    cost = np.asarray(cost, dtype=np.float64)
    return float(
        _estimate_values(model, policy, [cost], num_trajectories, horizon, rng)[0]
    )


def estimate_q_reg(
    model: CmdpModel,
    policy: TabularPolicy,
    ref_policy: TabularPolicy,
    cost: np.ndarray,
    alpha: float,
    num_trajectories: int,
    horizon: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Monte-Carlo estimate of the KL-regularized action values at all pairs.

    For each start (s, a): the immediate term
    ``cost(s,a) + alpha * log(1 / ref(a|s))`` is exact, and the tail sums
    discounted ``cost + alpha * KL(policy || ref)`` over steps 1..N-1 of M
    rollouts of ``policy``.  Each start pair draws its own substream (spawned
    from ``rng`` in row-major pair order).
    """
    if num_trajectories < 1 or horizon < 1:
        raise ParameterError("num_trajectories and horizon must be positive")
    cost = np.asarray(cost, dtype=np.float64)
    num_states, num_actions = model.num_states, model.num_actions
    kl_state = (np.exp(policy.log_probs) * (policy.log_probs - ref_policy.log_probs)).sum(
        axis=1
    )
    q_hat = cost - alpha * ref_policy.log_probs
    if horizon == 1:
        return q_hat
    discounts = model.gamma ** np.arange(1, horizon)
    streams = rng.spawn(num_states * num_actions)
    for s in range(num_states):
        for a in range(num_actions):
            child = streams[s * num_actions + a]
            states, actions = _rollout_block(
                model,
                policy,
                np.full(num_trajectories, s),
                np.full(num_trajectories, a),
                horizon,
                child,
            )
            tail_states = states[:, 1:]
            per_step = cost[tail_states, actions[:, 1:]] + alpha * kl_state[tail_states]
            q_hat[s, a] += float((per_step @ discounts).sum() / num_trajectories)
    return q_hat


def run_pmd_pd_a(
    model: CmdpModel,
    config: SampleConfig,
    seed: int | None = None,
    q_audit=None,
) -> RunHistory:
    """Sample-based solver: the exact algorithm with every value estimated.

    The modified cost and the dual update consume estimated constraint
    values; the inner loop consumes estimated regularized action values.
    Budgets are re-derived each macro step from the running multiplier bound.
    Recorded objective/constraint values are exact (computed after the run
    from the stored policy snapshots) so convergence can be judged against
    the true model; the estimates that drove the run are recorded alongside,
    with cumulative query counts ``sum_k (M_V N_V + sum_t M_Q N_Q)``.

    ``q_audit(k, t, q_hat, policy, anchor, cost, alpha, budgets)`` is an
    optional inspection hook invoked after every action-value estimate.
    """
    root = config.seed if seed is None else int(seed)
    eta_prime = 1.0
    params = theorem_params(model, eta_prime, config.macro_steps, 0.0)
    alpha, eta = params.alpha, params.eta
    value_cap = model.cost_scale / (1.0 - model.gamma)

    history = RunHistory(algorithm="pmd-pd-a")
    pi = uniform_policy(model.num_states, model.num_actions)
    constraint_costs = list(model.constraint_costs)

    sched = schedule_params(
        config.epsilon,
        config.delta_conf,
        model.gamma,
        model.num_constraints,
        lambda_l1_bound=1.0,
        macro_steps=config.macro_steps,
        constants=config.constants,
    )
    v_hat = _estimate_values(
        model, pi, constraint_costs, sched.m_v, sched.n_v, _stream(root, _TAG_V, 0)
    )
    v_hat = np.clip(v_hat, -value_cap, value_cap)
    dual = init_dual(v_hat, eta_prime, mode="warn")
    queries = sched.m_v * sched.n_v
    history.initial_budget = (sched.m_v, sched.n_v)

    for k in range(config.macro_steps):
        sched = schedule_params(
            config.epsilon,
            config.delta_conf,
            model.gamma,
            model.num_constraints,
            lambda_l1_bound=max(1.0, float(np.abs(dual.lam).sum())),
            macro_steps=config.macro_steps,
            constants=config.constants,
        )
        cost, _ = modified_cost(model, dual)
        anchor = pi

        def q_source(t: int, pi_t: TabularPolicy) -> np.ndarray:
            q_hat = estimate_q_reg(
                model,
                pi_t,
                anchor,
                cost,
                alpha,
                sched.m_q,
                sched.n_q,
                _stream(root, _TAG_Q, k, t),
            )
            if q_audit is not None:
                q_audit(k, t, q_hat, pi_t, anchor, cost, alpha, (sched.m_q, sched.n_q))
            return q_hat

        pi_next = inner_loop(model, pi, dual, alpha, eta, sched.t_k, q_source)
        queries += sched.t_k * sched.m_q * sched.n_q

        v_hat = _estimate_values(
            model,
            pi_next,
            constraint_costs,
            sched.m_v,
            sched.n_v,
            _stream(root, _TAG_V, k + 1),
        )
        v_hat = np.clip(v_hat, -value_cap, value_cap)
        queries += sched.m_v * sched.n_v
        dual = dual_update(dual, v_hat, mode="warn")
        history.steps.append(
            StepRecord(
                k=k + 1,
                inner_steps=sched.t_k,
                cumulative_inner=(history.steps[-1].cumulative_inner if history.steps else 0)
                + sched.t_k,
                objective_value=math.nan,  # replaced by the exact value below
                constraint_values=np.full(model.num_constraints, math.nan),
                duals=dual.lam.copy(),
                estimated_constraint_values=v_hat.copy(),
                queries_cumulative=queries,
                budgets=(sched.m_v, sched.n_v, sched.m_q, sched.n_q),
            )
        )
        history.policies.append(pi_next.log_probs)
        pi = pi_next

    # Post-hoc exact evaluation of the recorded policies for diagnosis.
    for idx, log_probs in enumerate(history.policies):
        policy = TabularPolicy(log_probs)
        record = history.steps[idx]
        exact_constraints = np.array(
            [policy_value(model, policy, c).v_rho for c in model.constraint_costs]
        )
        history.steps[idx] = replace(
            record,
            objective_value=policy_value(model, policy, model.objective_cost).v_rho,
            constraint_values=exact_constraints,
        )
    return history


def total_query_budget(history: RunHistory) -> int:
    """Closed-form budget sum from the recorded per-step schedules."""
    if history.initial_budget is None:
        raise ConfigurationError("history does not carry sample budgets")
    total = history.initial_budget[0] * history.initial_budget[1]
    for step in history.steps:
        if step.budgets is None:
            raise ConfigurationError("step without recorded budgets")
        m_v, n_v, m_q, n_q = step.budgets
        total += m_v * n_v + step.inner_steps * m_q * n_q
    return total
