import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmdpkit.exact import policy_value, visitation
from cmdpkit.model import CmdpModel
from cmdpkit.pmdpd import modified_cost, init_dual, solve_inner_optimum
from cmdpkit.policies import (
    ParameterError,
    TabularPolicy,
    expected_kl,
    npg_entropy_step,
    npg_step,
    pseudo_kl,
    pushback_check,
    uniform_policy,
)

from conftest import random_model, random_policy


def test_uniform_policy_probabilities():
    pi = uniform_policy(4, 10)
    assert np.allclose(pi.probs, 0.1, atol=1e-15)
    pi_one = uniform_policy(2, 1)
    assert np.allclose(pi_one.probs, 1.0)
    # rows normalize exactly
    peak = pi.log_probs.max(axis=1, keepdims=True)
    lse = peak + np.log(np.exp(pi.log_probs - peak).sum(axis=1, keepdims=True))
    assert np.allclose(lse, 0.0, atol=1e-15)


def test_from_probs_rejects_zero():
    with pytest.raises(ParameterError):
        TabularPolicy.from_probs(np.array([[1.0, 0.0]]))


def test_expected_kl_identical_is_zero(rng):
    pi = random_policy(rng, 4, 3)
    assert expected_kl(np.full(4, 0.25), pi, pi) == 0.0


def test_expected_kl_hand_computed():
    pi = TabularPolicy.from_probs(np.array([[0.9, 0.1]]))
    ref = TabularPolicy.from_probs(np.array([[0.5, 0.5]]))
    value = expected_kl(np.array([1.0]), pi, ref)
    assert value == pytest.approx(0.9 * np.log(1.8) + 0.1 * np.log(0.2), abs=1e-12)


def test_pseudo_kl_zero_on_equal(rng):
    model = random_model(seed=21)
    pi = random_policy(rng, model.num_states, model.num_actions)
    d = visitation(model, pi)
    assert pseudo_kl(d, d) == 0.0


def test_pseudo_kl_matches_expected_kl(rng):
    model = random_model(seed=22)
    for _ in range(20):
        pi_a = random_policy(rng, model.num_states, model.num_actions)
        pi_b = random_policy(rng, model.num_states, model.num_actions)
        da, db = visitation(model, pi_a), visitation(model, pi_b)
        assert pseudo_kl(da, db) == pytest.approx(
            expected_kl(da.state_marginal, pi_a, pi_b), abs=1e-10
        )


def test_pseudo_kl_bregman_identity(rng):
    # pseudo-KL equals the Bregman divergence of the conditional-entropy potential
    def phi(d):
        marg = d.sum(axis=1)
        ent_sa = np.where(d > 0, d * np.log(np.where(d > 0, d, 1.0)), 0.0).sum()
        ent_s = np.where(marg > 0, marg * np.log(np.where(marg > 0, marg, 1.0)), 0.0).sum()
        return ent_sa - ent_s

    def grad_phi(d):
        marg = d.sum(axis=1, keepdims=True)
        return np.log(d) - np.log(marg)

    model = random_model(seed=23)
    for _ in range(20):
        d1 = visitation(model, random_policy(rng, model.num_states, model.num_actions)).d
        d2 = visitation(model, random_policy(rng, model.num_states, model.num_actions)).d
        bregman = phi(d1) - phi(d2) - (grad_phi(d2) * (d1 - d2)).sum()
        assert pseudo_kl(d1, d2) == pytest.approx(bregman, abs=1e-9)


def test_pseudo_kl_nonnegative(rng):
    model = random_model(seed=24)
    for _ in range(50):
        d1 = visitation(model, random_policy(rng, model.num_states, model.num_actions))
        d2 = visitation(model, random_policy(rng, model.num_states, model.num_actions))
        assert pseudo_kl(d1, d2) >= 0.0


def test_pseudo_kl_support_violation_names_state():
    d1 = np.array([[0.5, 0.0], [0.25, 0.25]])
    d2 = np.array([[0.0, 0.0], [0.5, 0.5]])
    with pytest.raises(ValueError, match="state 0"):
        pseudo_kl(d1, d2)


def test_npg_step_constant_q_is_identity(rng):
    pi = random_policy(rng, 3, 4)
    q = np.repeat(rng.normal(size=(3, 1)), 4, axis=1)
    stepped = npg_step(pi, q, eta=0.7)
    assert np.allclose(stepped.log_probs, pi.log_probs, atol=1e-12)


def test_npg_step_eta_zero_is_identity(rng):
    pi = random_policy(rng, 3, 4)
    q = rng.normal(size=(3, 4))
    assert np.allclose(npg_step(pi, q, 0.0).log_probs, pi.log_probs, atol=1e-15)


def test_npg_step_hand_computed():
    pi = TabularPolicy.from_probs(np.array([[0.5, 0.5]]))
    stepped = npg_step(pi, np.array([[0.0, 1.0]]), eta=1.0)
    z = 0.5 + 0.5 * np.exp(-1.0)
    assert stepped.probs[0, 0] == pytest.approx(0.5 / z, abs=1e-12)
    assert stepped.probs[0, 1] == pytest.approx(0.5 * np.exp(-1.0) / z, abs=1e-12)


def test_npg_step_per_state_constant_shift_invariance(rng):
    pi = random_policy(rng, 4, 3)
    q = rng.normal(size=(4, 3))
    shifted = q + rng.normal(size=(4, 1))
    a = npg_step(pi, q, 0.5)
    b = npg_step(pi, shifted, 0.5)
    assert np.allclose(a.log_probs, b.log_probs, atol=1e-12)


def test_npg_step_matches_generic_convex_solver(rng):
    # independent oracle: unconstrained minimization over logits of
    # <q, p> + (1/eta) KL(p || p_old)
    from scipy.optimize import minimize

    eta = 0.8
    pi = random_policy(rng, 2, 4)
    q = rng.normal(size=(2, 4))
    stepped = npg_step(pi, q, eta)
    for s in range(2):
        p_old = pi.probs[s]

        def objective(z):
            z = z - z.max()
            p = np.exp(z) / np.exp(z).sum()
            return float(q[s] @ p + (p @ (np.log(p) - np.log(p_old))) / eta)

        best = min(
            (
                minimize(objective, x0, method="Nelder-Mead",
                         options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000})
                for x0 in (np.zeros(4), -eta * q[s])
            ),
            key=lambda r: r.fun,
        )
        z = best.x - best.x.max()
        p_solver = np.exp(z) / np.exp(z).sum()
        assert np.allclose(p_solver, stepped.probs[s], atol=1e-8)


def test_entropy_step_full_mixing_forgets_current_policy(rng):
    # at eta = (1-gamma)/alpha the update depends only on the action values
    gamma, alpha = 0.8, 2.0
    eta = (1 - gamma) / alpha
    q = rng.normal(size=(3, 4))
    a = npg_entropy_step(random_policy(rng, 3, 4), q, alpha, eta, gamma)
    b = npg_entropy_step(random_policy(rng, 3, 4), q, alpha, eta, gamma)
    assert np.allclose(a.log_probs, b.log_probs, atol=1e-12)
    direct = TabularPolicy.from_logits(-q / alpha)
    assert np.allclose(a.log_probs, direct.log_probs, atol=1e-12)


def test_entropy_step_constant_q_gives_uniform(rng):
    gamma, alpha = 0.8, 2.0
    eta = (1 - gamma) / alpha
    q = np.repeat(rng.normal(size=(3, 1)), 4, axis=1)
    stepped = npg_entropy_step(random_policy(rng, 3, 4), q, alpha, eta, gamma)
    assert np.allclose(stepped.probs, 0.25, atol=1e-12)


def test_entropy_step_closed_form(rng):
    gamma, alpha, eta = 0.6, 1.5, 0.1
    pi = uniform_policy(3, 2)
    q = rng.normal(size=(3, 2))
    stepped = npg_entropy_step(pi, q, alpha, eta, gamma)
    mix = 1 - eta * alpha / (1 - gamma)
    raw = pi.probs**mix * np.exp(-eta * q / (1 - gamma))
    expected = raw / raw.sum(axis=1, keepdims=True)
    assert np.allclose(stepped.probs, expected, atol=1e-12)


def test_entropy_step_rejects_large_eta(rng):
    gamma, alpha = 0.8, 2.0
    with pytest.raises(ParameterError):
        npg_entropy_step(
            uniform_policy(2, 2), np.zeros((2, 2)), alpha, 2 * (1 - gamma) / alpha, gamma
        )


@given(seed=st.integers(0, 10_000), eta=st.floats(0.01, 2.0))
@settings(max_examples=30, deadline=None)
def test_npg_step_preserves_normalization(seed, eta):
    rng = np.random.default_rng(seed)
    pi = random_policy(rng, 3, 5)
    q = rng.normal(0, 10, size=(3, 5))
    stepped = npg_step(pi, q, eta)
    peak = stepped.log_probs.max(axis=1)
    lse = peak + np.log(np.exp(stepped.log_probs - peak[:, None]).sum(axis=1))
    assert np.abs(lse).max() <= 1e-12
    assert np.all(np.isfinite(stepped.log_probs))


def _inner_setup(seed):
    model = random_model(seed=seed, states=4, actions=3)
    dual = init_dual(model, 1.0)
    cost, _ = modified_cost(model, dual)
    anchor = uniform_policy(model.num_states, model.num_actions)
    alpha = 0.5
    eta = (1 - model.gamma) / alpha
    pi_min, _ = solve_inner_optimum(model, anchor, cost, alpha, eta, tol=1e-12)
    return model, cost, anchor, alpha, pi_min


def test_pushback_at_the_minimizer():
    model, cost, anchor, alpha, pi_min = _inner_setup(31)
    assert pushback_check(model, cost, pi_min, pi_min, anchor, alpha) == 0.0


def test_pushback_at_the_anchor():
    model, cost, anchor, alpha, pi_min = _inner_setup(32)
    assert pushback_check(model, cost, pi_min, anchor, anchor, alpha, slack=1e-7) == 0.0


def test_pushback_on_random_policies(rng):
    model, cost, anchor, alpha, pi_min = _inner_setup(33)
    for _ in range(20):
        pi = random_policy(rng, model.num_states, model.num_actions)
        residual = pushback_check(model, cost, pi_min, pi, anchor, alpha, slack=1e-7)
        assert residual == 0.0
