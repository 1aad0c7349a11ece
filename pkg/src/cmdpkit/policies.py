"""Softmax tabular policies, NPG update steps, and divergence machinery.

Policies are stored as log-probabilities with each row normalized so that its
log-sum-exp is zero.  All updates are carried out in the log domain with
per-row max subtraction, so very large action-value magnitudes (and the very
small probabilities of long runs) never overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROW_NORMALIZATION_TOL = 1e-12
# Probabilities below this cannot be represented faithfully in the log domain
# when a policy is built from a probability table.
POSITIVITY_FLOOR = 1e-300
# Divergences are clipped at zero when roundoff produces a tiny negative sum.
_KL_FLOAT_GUARD = -1e-12


class ParameterError(ValueError):
    """Raised for out-of-range step sizes or malformed update inputs."""


def _normalize_log_rows(logits: np.ndarray) -> np.ndarray:
    peak = logits.max(axis=1, keepdims=True)
    log_z = peak + np.log(np.exp(logits - peak).sum(axis=1, keepdims=True))
    return logits - log_z


@dataclass(frozen=True)
class TabularPolicy:
    """Row-stochastic policy stored as log-probabilities, one row per state."""

    log_probs: np.ndarray

    def __post_init__(self):
        lp = np.asarray(self.log_probs, dtype=np.float64)
        if lp.ndim != 2:
            raise ParameterError("log_probs must have shape (S, A)")
        if not np.all(np.isfinite(lp)):
            raise ParameterError("log_probs must be finite (no zero probabilities)")
        peak = lp.max(axis=1)
        log_z = peak + np.log(np.exp(lp - peak[:, None]).sum(axis=1))
        if np.any(np.abs(log_z) > ROW_NORMALIZATION_TOL):
            s = int(np.argmax(np.abs(log_z)))
            raise ParameterError(
                f"row {s} log-sum-exps to {log_z[s]:.3e}, expected 0"
            )
        lp = lp.copy()
        lp.setflags(write=False)
        object.__setattr__(self, "log_probs", lp)

    @property
    def num_states(self) -> int:
        return self.log_probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.log_probs.shape[1]

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "TabularPolicy":
        logits = np.asarray(logits, dtype=np.float64)
        if not np.all(np.isfinite(logits)):
            raise ParameterError("logits must be finite")
        return cls(_normalize_log_rows(logits))

    @classmethod
    def from_probs(cls, probs: np.ndarray) -> "TabularPolicy":
        probs = np.asarray(probs, dtype=np.float64)
        if np.any(probs < POSITIVITY_FLOOR):
            s, a = np.unravel_index(int(np.argmin(probs)), probs.shape)
            raise ParameterError(
                f"probability {probs[s, a]!r} at ({s},{a}) is below the "
                f"positivity floor {POSITIVITY_FLOOR}"
            )
        return cls.from_logits(np.log(probs))


def uniform_policy(num_states: int, num_actions: int) -> TabularPolicy:
    """Policy taking every action uniformly at random in every state."""
    return TabularPolicy(
        np.full((num_states, num_actions), -np.log(num_actions))
    )


def expected_kl(
    d_state: np.ndarray, pi: TabularPolicy, pi_ref: TabularPolicy
) -> float:
    """State-weighted KL divergence sum_s d(s) * KL(pi(.|s) || pi_ref(.|s))."""
    d_state = np.asarray(d_state, dtype=np.float64)
    diff = pi.log_probs - pi_ref.log_probs
    per_state = (np.exp(pi.log_probs) * diff).sum(axis=1)
    total = float(d_state @ per_state)
    if _KL_FLOAT_GUARD < total < 0.0:
        return 0.0
    return total


def pseudo_kl(d1, d2) -> float:
    """KL-style divergence between two visitation distributions.

    Computed on the action conditionals induced by each distribution,
    weighted by the first distribution's state-action mass.  Requires the
    second distribution to cover the first's support.
    """
    m1 = np.asarray(getattr(d1, "d", d1), dtype=np.float64)
    m2 = np.asarray(getattr(d2, "d", d2), dtype=np.float64)
    s1 = m1.sum(axis=1)
    s2 = m2.sum(axis=1)
    bad_states = np.flatnonzero((s1 > 0) & (s2 <= 0))
    if bad_states.size:
        raise ValueError(
            f"support violation: second distribution has no mass at state {bad_states[0]}"
        )
    total = 0.0
    for s in np.flatnonzero(s1 > 0):
        row1 = m1[s]
        active = row1 > 0
        cond1 = row1[active] / s1[s]
        cond2 = m2[s, active] / s2[s]
        if np.any(cond2 <= 0):
            raise ValueError(
                f"support violation: second distribution's conditional vanishes at state {s}"
            )
        total += float(row1[active] @ (np.log(cond1) - np.log(cond2)))
    if _KL_FLOAT_GUARD < total < 0.0:
        return 0.0
    return total


def npg_step(policy: TabularPolicy, q_values: np.ndarray, eta: float) -> TabularPolicy:
    """Multiplicative-exponential policy update pi' ∝ pi * exp(-eta * Q).

    This is the closed form of the natural gradient step under the softmax
    parameterization, equivalently a mirror-descent step with KL proximity.
    """
    q_values = np.asarray(q_values, dtype=np.float64)
    if not np.all(np.isfinite(q_values)):
        raise ParameterError("q_values must be finite")
    if q_values.shape != policy.log_probs.shape:
        raise ParameterError("q_values shape does not match the policy")
    return TabularPolicy(_normalize_log_rows(policy.log_probs - eta * q_values))


def npg_entropy_step(
    policy: TabularPolicy,
    q_reg: np.ndarray,
    alpha: float,
    eta: float,
    gamma: float,
) -> TabularPolicy:
    """Regularized NPG step:

        pi'(a|s) ∝ pi(a|s)^(1 - eta*alpha/(1-gamma)) * exp(-eta * Q(s,a) / (1-gamma))

    where Q is the KL-regularized action value against the current anchor.
    Requires 0 < eta <= (1-gamma)/alpha.
    """
    q_reg = np.asarray(q_reg, dtype=np.float64)
    if not np.all(np.isfinite(q_reg)):
        raise ParameterError("q_reg must be finite")
    if alpha <= 0:
        raise ParameterError(f"alpha must be positive: got {alpha!r}")
    limit = (1.0 - gamma) / alpha
    if not (0.0 < eta <= limit * (1.0 + 1e-12)):
        raise ParameterError(
            f"eta must lie in (0, (1-gamma)/alpha] = (0, {limit!r}]: got {eta!r}"
        )
    mix = 1.0 - eta * alpha / (1.0 - gamma)
    logits = mix * policy.log_probs - (eta / (1.0 - gamma)) * q_reg
    return TabularPolicy(_normalize_log_rows(logits))


def pushback_check(
    model,
    cost: np.ndarray,
    policy_min: TabularPolicy,
    policy_any: TabularPolicy,
    ref_policy: TabularPolicy,
    alpha: float,
    slack: float = 1e-8,
) -> float:
    """Residual of the mirror-descent pushback inequality; 0 when it holds.

    ``policy_min`` must (approximately) minimize the linear objective plus
    ``alpha/(1-gamma)`` times the visitation-weighted KL to ``ref_policy``.
    The inequality then bounds its regularized objective by that of any other
    policy minus the divergence to the minimizer.  ``slack`` absorbs the
    approximation tolerance of ``policy_min``.
    """
    from .exact import policy_value, visitation

    weight = alpha / (1.0 - model.gamma)
    d_min = visitation(model, policy_min).state_marginal
    d_any = visitation(model, policy_any).state_marginal
    lhs = policy_value(model, policy_min, cost).v_rho + weight * expected_kl(
        d_min, policy_min, ref_policy
    )
    rhs = (
        policy_value(model, policy_any, cost).v_rho
        + weight * expected_kl(d_any, policy_any, ref_policy)
        - weight * expected_kl(d_any, policy_any, policy_min)
    )
    return max(0.0, lhs - rhs - slack)
