import numpy as np
import pytest

from cmdpkit.model import RandomCmdpSpec, generate_random
from cmdpkit.policies import TabularPolicy


def random_model(seed=0, states=5, actions=3, constraints=1, gamma=0.8, **kw):
    spec = RandomCmdpSpec(
        num_states=states,
        num_actions=actions,
        num_constraints=constraints,
        gamma=gamma,
        seed=seed,
        **kw,
    )
    return generate_random(spec)


def random_policy(rng, num_states, num_actions, spread=3.0):
    return TabularPolicy.from_logits(rng.normal(0.0, spread, (num_states, num_actions)))


@pytest.fixture
def small_model():
    return random_model(seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
