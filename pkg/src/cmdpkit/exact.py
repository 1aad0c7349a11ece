"""Exact policy evaluation via dense linear solves.

State values solve (I - gamma * P_pi) v = c_pi for the policy-averaged kernel
and cost; the systems are nonsingular for gamma < 1 because the kernel's
spectral radius is at most gamma.  Dense LU with partial pivoting is accurate
and cheap at tabular sizes, so no iterative refinement is attempted; instead
every solve is guarded by a Bellman residual check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CmdpModel
from .policies import TabularPolicy

BELLMAN_RESIDUAL_TOL = 1e-8
FLOW_TOL = 1e-9
_VALUE_BOUND_SLACK = 1e-9


class EvaluationError(RuntimeError):
    """Raised when a linear solve fails its residual or bound checks."""


@dataclass(frozen=True)
class EvalBundle:
    """State values, action values, and the start-weighted scalar value."""

    v: np.ndarray
    q: np.ndarray
    v_rho: float


@dataclass(frozen=True)
class VisitationDistribution:
    """Discounted state-action visitation distribution (sums to one)."""

    d: np.ndarray

    @property
    def state_marginal(self) -> np.ndarray:
        return self.d.sum(axis=1)


def policy_kernel(model: CmdpModel, policy: TabularPolicy) -> np.ndarray:
    """Policy-averaged transition matrix P_pi[s, s'] = sum_a pi(a|s) P(s'|s,a)."""
    return np.einsum("sa,sat->st", policy.probs, model.transition)


def _solve_values(
    model: CmdpModel, policy: TabularPolicy, cost: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    probs = policy.probs
    cost_pi = (probs * cost).sum(axis=1)
    kernel = policy_kernel(model, policy)
    system = np.eye(model.num_states) - model.gamma * kernel
    v = np.linalg.solve(system, cost_pi)
    residual = np.abs(v - (cost_pi + model.gamma * (kernel @ v))).max()
    if residual > BELLMAN_RESIDUAL_TOL:
        raise EvaluationError(f"Bellman residual {residual:.3e} exceeds tolerance")
    return v, cost_pi


def policy_value(model: CmdpModel, policy: TabularPolicy, cost: np.ndarray) -> EvalBundle:
    """Evaluate a policy on an arbitrary state-action cost.

    Returns state values, one-step-consistent action values, and the value
    under the start distribution.
    """
    cost = np.asarray(cost, dtype=np.float64)
    v, _ = _solve_values(model, policy, cost)
    c_eff = float(np.abs(cost).max()) if cost.size else 0.0
    bound = c_eff / (1.0 - model.gamma)
    worst = float(np.abs(v).max()) if v.size else 0.0
    if worst > bound * (1.0 + _VALUE_BOUND_SLACK) + 1e-12:
        raise EvaluationError(
            f"value magnitude {worst:.6e} exceeds bound {bound:.6e}"
        )
    q = cost + model.gamma * np.einsum("sat,t->sa", model.transition, v)
    return EvalBundle(v=v, q=q, v_rho=float(model.rho @ v))


def visitation(model: CmdpModel, policy: TabularPolicy) -> VisitationDistribution:
    """Discounted state-action visitation distribution of a policy.

    Satisfies the flow identity
    gamma * sum_{s',a'} P(s|s',a') d(s',a') + (1-gamma) * rho(s) = sum_a d(s,a)
    and the duality <d, c> / (1-gamma) = V_c(rho) for every cost c.
    """
    kernel = policy_kernel(model, policy)
    system = np.eye(model.num_states) - model.gamma * kernel
    mu = np.linalg.solve(system.T, model.rho)
    state_marginal = (1.0 - model.gamma) * mu
    if state_marginal.min() < -FLOW_TOL:
        raise EvaluationError(
            f"negative visitation mass {state_marginal.min():.3e}"
        )
    d = np.maximum(state_marginal, 0.0)[:, None] * policy.probs
    return VisitationDistribution(d=d)


def regularized_value(
    model: CmdpModel,
    policy: TabularPolicy,
    ref_policy: TabularPolicy,
    cost: np.ndarray,
    alpha: float,
) -> EvalBundle:
    """KL-regularized evaluation against a reference policy.

    The state value is the discounted sum of
    ``cost(s,a) + alpha * log(pi(a|s) / ref(a|s))``, and the action value is

        Q(s,a) = cost(s,a) + alpha * log(1 / ref(a|s)) + gamma * E[V(s')],

    i.e. the log of the evaluated policy itself is excluded from the
    immediate term.  The reference must be strictly positive; finiteness of
    its stored log-probabilities certifies that, and all log ratios are taken
    directly in the log domain so underflowing probabilities are harmless.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if not np.all(np.isfinite(ref_policy.log_probs)):
        raise EvaluationError("reference policy has a probability below the positivity floor")
    augmented = cost + alpha * (policy.log_probs - ref_policy.log_probs)
    bundle = policy_value(model, policy, augmented)
    q = cost - alpha * ref_policy.log_probs + model.gamma * np.einsum(
        "sat,t->sa", model.transition, bundle.v
    )
    return EvalBundle(v=bundle.v, q=q, v_rho=bundle.v_rho)
