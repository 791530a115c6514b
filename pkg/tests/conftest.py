import numpy as np
import pytest

from cmdpbounds.environments import PendulumConfig, RandomCmdpConfig, build_pendulum_cmdp, generate_random_cmdp

REDUCED_PENDULUM = {"n_theta_bins": 21, "n_thetadot_bins": 21}


@pytest.fixture(scope="session")
def small_cmdp():
    return generate_random_cmdp(RandomCmdpConfig(n_states=8, n_actions=3, n_constraints=2, seed=1))


@pytest.fixture(scope="session")
def random20():
    return generate_random_cmdp(RandomCmdpConfig(seed=0))


@pytest.fixture(scope="session")
def unconstrained_cmdp():
    return generate_random_cmdp(RandomCmdpConfig(n_states=10, n_constraints=0, seed=4))


@pytest.fixture(scope="session")
def reduced_pendulum():
    return build_pendulum_cmdp(PendulumConfig(**REDUCED_PENDULUM))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
