"""Comparison algorithms: projected primal-dual NPG and a rectified primal
method that alternates between objective and violated constraints.

Both emit the same per-step history as the main solver, so the harness can
compare algorithms without adapters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exact import policy_value
from .history import RunHistory, StepRecord
from .model import CmdpModel
from .pmdpd import ConfigurationError
from .policies import TabularPolicy, npg_step, uniform_policy


@dataclass(frozen=True)
class BaselineConfig:
    algorithm: str  # "npg-pd" | "crpo"
    iterations: int
    eta: float = 1.0
    eta_prime: float = 1.0
    xi: float | None = None  # Slater margin for the dual projection (npg-pd)
    zeta: float = 0.0  # constraint tolerance (crpo)
    seed: int | None = None

    def __post_init__(self):
        if self.algorithm not in ("npg-pd", "crpo"):
            raise ConfigurationError(f"unknown baseline {self.algorithm!r}")
        if self.iterations < 1:
            raise ConfigurationError("iterations must be positive")
        if self.eta <= 0 or self.eta_prime <= 0:
            raise ConfigurationError("step sizes must be positive")
        if self.zeta < 0:
            raise ConfigurationError("zeta must be nonnegative")


def run_npg_pd(model: CmdpModel, config: BaselineConfig) -> RunHistory:
    """Primal-dual NPG with the conventional projected dual ascent.

    The dual step clips multipliers to [0, 2 / ((1-gamma) * xi)], so the
    Slater margin must be supplied (take it from the ground-truth module when
    unknown).  The dual is updated after each primal step using the new
    policy's values.
    """
    if config.xi is None or config.xi <= 0:
        raise ConfigurationError("npg-pd requires a positive Slater margin xi")
    cap = 2.0 / ((1.0 - model.gamma) * config.xi)
    m = model.num_constraints
    lam = np.zeros(m)
    pi = uniform_policy(model.num_states, model.num_actions)
    history = RunHistory(algorithm="npg-pd")
    for t in range(config.iterations):
        cost = model.objective_cost
        if m:
            cost = cost + np.einsum("i,isa->sa", lam, model.constraint_costs)
        q = policy_value(model, pi, cost).q
        pi = npg_step(pi, q, config.eta)
        v0 = policy_value(model, pi, model.objective_cost).v_rho
        values = np.array([policy_value(model, pi, c).v_rho for c in model.constraint_costs])
        lam = np.clip(lam + config.eta_prime * values, 0.0, cap)
        history.steps.append(
            StepRecord(
                k=t + 1,
                inner_steps=1,
                cumulative_inner=t + 1,
                objective_value=v0,
                constraint_values=values,
                duals=lam.copy(),
            )
        )
        history.policies.append(pi.log_probs)
    return history


def run_crpo(model: CmdpModel, config: BaselineConfig) -> RunHistory:
    """Rectified primal method: step on the most violated constraint when any
    constraint value exceeds the tolerance, otherwise on the objective.

    Reconstruction of the alternating scheme from its one-line description;
    ties among equally violated constraints break to the lowest index.  With
    no constraints this is plain NPG on the objective.
    """
    m = model.num_constraints
    pi = uniform_policy(model.num_states, model.num_actions)
    history = RunHistory(algorithm="crpo")
    for t in range(config.iterations):
        values = np.array([policy_value(model, pi, c).v_rho for c in model.constraint_costs])
        if m and values.max() > config.zeta:
            target = int(np.argmax(values))  # argmax ties resolve to the lowest index
            cost = model.constraint_costs[target]
        else:
            cost = model.objective_cost
        q = policy_value(model, pi, cost).q
        pi = npg_step(pi, q, config.eta)
        v0 = policy_value(model, pi, model.objective_cost).v_rho
        values_new = np.array(
            [policy_value(model, pi, c).v_rho for c in model.constraint_costs]
        )
        history.steps.append(
            StepRecord(
                k=t + 1,
                inner_steps=1,
                cumulative_inner=t + 1,
                objective_value=v0,
                constraint_values=values_new,
                duals=np.zeros(m),
            )
        )
        history.policies.append(pi.log_probs)
    return history


def run_baseline(model: CmdpModel, config: BaselineConfig) -> RunHistory:
    if config.algorithm == "npg-pd":
        return run_npg_pd(model, config)
    return run_crpo(model, config)
