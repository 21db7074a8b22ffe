import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rating_forge.foundation import cost_model, make_type_grid

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def ref_grid():
    return make_type_grid(source={"dist": "uniform", "low": 1.0, "high": 2.0}, n=400)


@pytest.fixture(scope="session")
def quad():
    return cost_model("quadratic")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
