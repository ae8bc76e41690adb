import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ghz_factory.protocol import ghz_projection_table, make_bell, make_werner, werner_p_for_fidelity

settings.register_profile("default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

WERNER_P = werner_p_for_fidelity(0.94)


@pytest.fixture(scope="session")
def ideal_states():
    return ghz_projection_table([make_bell()] * 3)


@pytest.fixture(scope="session")
def werner_states():
    w = make_werner(WERNER_P)
    return ghz_projection_table([w, w, w])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
