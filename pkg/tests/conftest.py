import os

import pytest
from hypothesis import HealthCheck, settings

from tripod_sim.maxwell_bloch import simulate
from tripod_sim.protocol import detuning_experiment, splitting_experiment

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def split_config():
    return splitting_experiment()


@pytest.fixture(scope="session")
def split_record(split_config):
    c = split_config
    return simulate(c.medium, c.sequence, c.grid)


@pytest.fixture(scope="session")
def beating_record():
    c = detuning_experiment(2.0, 0.4)
    return simulate(c.medium, c.sequence, c.grid)
