import numpy as np
import pytest

from cmdpkit.baselines import BaselineConfig, run_crpo, run_npg_pd
from cmdpkit.exact import policy_value
from cmdpkit.lp import solve_lp
from cmdpkit.model import CmdpModel
from cmdpkit.pmdpd import ConfigurationError
from cmdpkit.policies import npg_step, uniform_policy

from conftest import random_model


def _strictly_feasible_model(seed=60):
    # constraint cost bounded away from zero from below: every policy satisfies it
    base = random_model(seed=seed, constraints=0)
    constraint = np.full((1, base.num_states, base.num_actions), -0.5)
    return CmdpModel(
        transition=base.transition,
        objective_cost=base.objective_cost,
        constraint_costs=constraint,
        rho=base.rho,
        gamma=base.gamma,
    )


def test_npg_pd_lambda_stays_zero_when_strictly_feasible():
    model = _strictly_feasible_model()
    history = run_npg_pd(model, BaselineConfig(algorithm="npg-pd", iterations=30, xi=2.5))
    assert np.all(history.dual_series() == 0.0)
    # and the run is then plain unconstrained NPG on the objective
    pi = uniform_policy(model.num_states, model.num_actions)
    for step in history.steps:
        q = policy_value(model, pi, model.objective_cost).q
        pi = npg_step(pi, q, 1.0)
        assert step.objective_value == pytest.approx(
            policy_value(model, pi, model.objective_cost).v_rho, abs=1e-12
        )


def test_npg_pd_dual_clips_at_cap():
    # constraint cost bounded away from zero from above: always violated
    base = random_model(seed=61, constraints=0)
    constraint = np.full((1, base.num_states, base.num_actions), 0.4)
    model = CmdpModel(
        transition=base.transition,
        objective_cost=base.objective_cost,
        constraint_costs=constraint,
        rho=base.rho,
        gamma=base.gamma,
    )
    xi = 2.0
    cap = 2.0 / ((1 - model.gamma) * xi)
    history = run_npg_pd(model, BaselineConfig(algorithm="npg-pd", iterations=40, xi=xi))
    duals = history.dual_series().ravel()
    assert duals.max() == pytest.approx(cap)
    assert np.all(duals <= cap + 1e-12)
    assert np.all(duals >= 0.0)


def test_npg_pd_requires_margin(small_model):
    with pytest.raises(ConfigurationError):
        run_npg_pd(small_model, BaselineConfig(algorithm="npg-pd", iterations=5))


def test_npg_pd_duals_stay_in_projection_range(small_model):
    xi = solve_lp(small_model).xi
    cap = 2.0 / ((1 - small_model.gamma) * xi)
    history = run_npg_pd(
        small_model, BaselineConfig(algorithm="npg-pd", iterations=100, xi=xi)
    )
    duals = history.dual_series()
    assert duals.min() >= 0.0
    assert duals.max() <= cap + 1e-12


def test_crpo_without_constraints_is_plain_npg():
    model = random_model(seed=62, constraints=0)
    history = run_crpo(model, BaselineConfig(algorithm="crpo", iterations=20))
    pi = uniform_policy(model.num_states, model.num_actions)
    for step in history.steps:
        q = policy_value(model, pi, model.objective_cost).q
        pi = npg_step(pi, q, 1.0)
        assert step.objective_value == pytest.approx(
            policy_value(model, pi, model.objective_cost).v_rho, abs=1e-12
        )


def test_crpo_targets_violated_constraint_first():
    # constraint always violated at the uniform policy: early steps optimize it
    base = random_model(seed=63, constraints=0)
    constraint = (np.abs(base.objective_cost) * 0.5 + 0.2)[None]
    model = CmdpModel(
        transition=base.transition,
        objective_cost=base.objective_cost,
        constraint_costs=constraint,
        rho=base.rho,
        gamma=base.gamma,
    )
    pi = uniform_policy(model.num_states, model.num_actions)
    q_constraint = policy_value(model, pi, constraint[0]).q
    expected_first = npg_step(pi, q_constraint, 1.0)
    history = run_crpo(model, BaselineConfig(algorithm="crpo", iterations=3))
    first_value = policy_value(model, expected_first, model.objective_cost).v_rho
    assert history.steps[0].objective_value == pytest.approx(first_value, abs=1e-12)


def test_crpo_feasible_faster_than_npg_pd_gap_slower_than_pmd_pd():
    from cmdpkit.model import RandomCmdpSpec, generate_random_max_form
    from cmdpkit.pmdpd import PmdPdConfig, run_pmd_pd

    spec = RandomCmdpSpec(num_states=20, num_actions=10, num_constraints=1, gamma=0.8, seed=7)
    model = generate_random_max_form(spec, [3.0])
    gt = solve_lp(model)
    iters = 300
    h_crpo = run_crpo(model, BaselineConfig(algorithm="crpo", iterations=iters))
    h_npg = run_npg_pd(model, BaselineConfig(algorithm="npg-pd", iterations=iters, xi=gt.xi))
    h_pmd = run_pmd_pd(model, PmdPdConfig(macro_steps=iters, eta=1.0, inner_schedule=1))

    def first_feasible(history):
        values = history.constraint_series().max(axis=1)
        hits = np.flatnonzero(values <= 0)
        return hits[0] if hits.size else len(values)

    assert first_feasible(h_crpo) <= first_feasible(h_npg)
    gap_crpo = h_crpo.running_average_objective()[-1] - gt.optimal_value
    gap_pmd = h_pmd.running_average_objective()[-1] - gt.optimal_value
    assert gap_pmd <= gap_crpo


def test_histories_share_schema(small_model):
    from cmdpkit.history import history_csv_text

    gt = solve_lp(small_model)
    h_npg = run_npg_pd(small_model, BaselineConfig(algorithm="npg-pd", iterations=3, xi=gt.xi))
    h_crpo = run_crpo(small_model, BaselineConfig(algorithm="crpo", iterations=3))
    header_npg = history_csv_text(h_npg, gt.optimal_value).splitlines()[0]
    header_crpo = history_csv_text(h_crpo, gt.optimal_value).splitlines()[0]
    assert header_npg == header_crpo
    assert header_npg == "k,T_cum,t_k,v0,v1,lambda1,avg_gap,avg_violation_1"


def test_baseline_config_validation():
    with pytest.raises(ConfigurationError):
        BaselineConfig(algorithm="sarsa", iterations=5)
    with pytest.raises(ConfigurationError):
        BaselineConfig(algorithm="crpo", iterations=0)
    with pytest.raises(ConfigurationError):
        BaselineConfig(algorithm="crpo", iterations=5, zeta=-0.1)
