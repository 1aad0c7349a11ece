import numpy as np
import pytest

from cmdpkit.exact import EvaluationError, policy_value, regularized_value, visitation
from cmdpkit.model import CmdpModel
from cmdpkit.pmdpd import solve_inner_optimum
from cmdpkit.policies import TabularPolicy, expected_kl, uniform_policy

from conftest import random_model, random_policy


def _single_state_model(gamma, cost_value):
    return CmdpModel(
        transition=np.ones((1, 1, 1)),
        objective_cost=np.full((1, 1), cost_value),
        constraint_costs=np.zeros((0, 1, 1)),
        rho=np.array([1.0]),
        gamma=gamma,
    )


def test_single_state_geometric_value():
    model = _single_state_model(0.8, 0.5)
    bundle = policy_value(model, uniform_policy(1, 1), model.objective_cost)
    assert bundle.v_rho == pytest.approx(2.5, abs=1e-12)


def test_gamma_zero_is_one_step_cost(rng):
    model = random_model(seed=5, gamma=0.0)
    pi = random_policy(rng, model.num_states, model.num_actions)
    bundle = policy_value(model, pi, model.objective_cost)
    expected = (pi.probs * model.objective_cost).sum(axis=1)
    assert np.allclose(bundle.v, expected, atol=1e-14)


def test_two_state_cycle_against_series_oracle():
    # deterministic 2-cycle, costs +1 / -1, gamma=0.5: v alternates signs
    transition = np.zeros((2, 1, 2))
    transition[0, 0, 1] = 1.0
    transition[1, 0, 0] = 1.0
    model = CmdpModel(
        transition=transition,
        objective_cost=np.array([[1.0], [-1.0]]),
        constraint_costs=np.zeros((0, 2, 1)),
        rho=np.array([1.0, 0.0]),
        gamma=0.5,
    )
    pi = uniform_policy(2, 1)
    bundle = policy_value(model, pi, model.objective_cost)

    # independent truncated-series oracle
    v0, sign, weight = 0.0, 1.0, 1.0
    for _ in range(200):
        v0 += weight * sign
        sign, weight = -sign, weight * 0.5
    assert abs(v0 - 2.0 / 3.0) < 1e-12
    assert bundle.v[0] == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert bundle.v[1] == pytest.approx(-2.0 / 3.0, abs=1e-12)


def test_q_satisfies_one_step_identity(rng):
    model = random_model(seed=9)
    pi = random_policy(rng, model.num_states, model.num_actions)
    cost = rng.uniform(-1, 1, (model.num_states, model.num_actions))
    bundle = policy_value(model, pi, cost)
    lookahead = cost + model.gamma * np.einsum("sat,t->sa", model.transition, bundle.v)
    assert np.allclose(bundle.q, lookahead, atol=1e-12)
    assert np.allclose((pi.probs * bundle.q).sum(axis=1), bundle.v, atol=1e-9)


def test_value_bound_and_residual(rng):
    model = random_model(seed=2, gamma=0.9)
    for _ in range(5):
        pi = random_policy(rng, model.num_states, model.num_actions)
        cost = rng.uniform(-1, 1, (model.num_states, model.num_actions))
        bundle = policy_value(model, pi, cost)
        c_eff = np.abs(cost).max()
        assert np.abs(bundle.v).max() <= c_eff / (1 - model.gamma) + 1e-9
        kernel = np.einsum("sa,sat->st", pi.probs, model.transition)
        c_pi = (pi.probs * cost).sum(axis=1)
        assert np.abs(bundle.v - (c_pi + model.gamma * kernel @ bundle.v)).max() <= 1e-9


def test_visitation_single_state(rng):
    model = _single_state_model(0.7, 0.0)
    d = visitation(model, uniform_policy(1, 1))
    assert d.d == pytest.approx(np.array([[1.0]]))


def test_visitation_gamma_zero(rng):
    model = random_model(seed=4, gamma=0.0)
    pi = random_policy(rng, model.num_states, model.num_actions)
    d = visitation(model, pi)
    assert np.allclose(d.d, model.rho[:, None] * pi.probs, atol=1e-12)


def test_visitation_flow_and_duality(rng):
    model = random_model(seed=6)
    pi = random_policy(rng, model.num_states, model.num_actions)
    dist = visitation(model, pi)
    assert dist.d.min() >= 0
    assert dist.d.sum() == pytest.approx(1.0, abs=1e-12)
    # flow constraints
    inflow = model.gamma * np.einsum("sat,sa->t", model.transition, dist.d)
    outflow = dist.d.sum(axis=1)
    assert np.allclose(outflow, inflow + (1 - model.gamma) * model.rho, atol=1e-9)
    # value duality on random costs
    for _ in range(10):
        cost = rng.uniform(-1, 1, (model.num_states, model.num_actions))
        via_d = (dist.d * cost).sum() / (1 - model.gamma)
        assert via_d == pytest.approx(policy_value(model, pi, cost).v_rho, abs=1e-9)


def test_visitation_distance_bound(rng):
    # l1 distance between visitations is controlled by the expected KL
    model = random_model(seed=8)
    coeff = model.gamma * np.sqrt(2.0) / (1 - model.gamma)
    for _ in range(100):
        pi_a = random_policy(rng, model.num_states, model.num_actions)
        pi_b = random_policy(rng, model.num_states, model.num_actions)
        da, db = visitation(model, pi_a), visitation(model, pi_b)
        lhs = np.abs(da.d - db.d).sum()
        kls = [
            expected_kl(da.state_marginal, pi_a, pi_b),
            expected_kl(da.state_marginal, pi_b, pi_a),
            expected_kl(db.state_marginal, pi_a, pi_b),
            expected_kl(db.state_marginal, pi_b, pi_a),
        ]
        assert lhs <= coeff * np.sqrt(min(kls)) + 1e-12


def test_regularized_matches_plain_when_policies_agree(rng):
    model = random_model(seed=10)
    pi = random_policy(rng, model.num_states, model.num_actions)
    cost = rng.uniform(-1, 1, (model.num_states, model.num_actions))
    reg = regularized_value(model, pi, pi, cost, alpha=2.0)
    plain = policy_value(model, pi, cost)
    assert np.allclose(reg.v, plain.v, atol=1e-12)


def test_alpha_zero_is_plain_value(rng):
    model = random_model(seed=12)
    pi = random_policy(rng, model.num_states, model.num_actions)
    ref = random_policy(rng, model.num_states, model.num_actions)
    cost = rng.uniform(-1, 1, (model.num_states, model.num_actions))
    reg = regularized_value(model, pi, ref, cost, alpha=0.0)
    plain = policy_value(model, pi, cost)
    assert np.allclose(reg.v, plain.v, atol=1e-12)
    assert np.allclose(reg.q, plain.q, atol=1e-12)


def test_regularized_value_sandwich(rng):
    # at the inner optimum: V(opt) <= V_reg(opt) <= V_reg(anchor) = V(anchor), per state
    model = random_model(seed=13)
    anchor = random_policy(rng, model.num_states, model.num_actions, spread=1.0)
    cost = rng.uniform(-1, 1, (model.num_states, model.num_actions))
    alpha = 0.5
    eta = (1 - model.gamma) / alpha
    pi_opt, opt_bundle = solve_inner_optimum(model, anchor, cost, alpha, eta)
    v_plain_opt = policy_value(model, pi_opt, cost).v
    v_anchor = policy_value(model, anchor, cost).v
    assert np.all(v_plain_opt <= opt_bundle.v + 1e-8)
    assert np.all(opt_bundle.v <= v_anchor + 1e-8)


def test_regularized_q_identity(rng):
    # V(s) = sum_a pi(a|s) (Q(s,a) + alpha log pi(a|s))
    model = random_model(seed=14)
    pi = random_policy(rng, model.num_states, model.num_actions)
    ref = random_policy(rng, model.num_states, model.num_actions)
    cost = rng.uniform(-1, 1, (model.num_states, model.num_actions))
    alpha = 1.3
    bundle = regularized_value(model, pi, ref, cost, alpha)
    recomposed = (pi.probs * (bundle.q + alpha * pi.log_probs)).sum(axis=1)
    assert np.allclose(recomposed, bundle.v, atol=1e-9)


def test_regularized_rejects_zero_probability_reference(rng):
    model = random_model(seed=15)
    pi = random_policy(rng, model.num_states, model.num_actions)
    bad = TabularPolicy.__new__(TabularPolicy)
    lp = np.full((model.num_states, model.num_actions), -np.log(model.num_actions))
    lp[0, 0] = -np.inf
    object.__setattr__(bad, "log_probs", lp)
    with pytest.raises(EvaluationError):
        regularized_value(model, pi, bad, model.objective_cost, 1.0)
