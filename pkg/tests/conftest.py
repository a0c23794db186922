import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# the benchmark runs are shared by the acceptance tests and the training invariants

# fixed absolute loss level for the convergence-speed invariant
FIXED_LOSS_THRESHOLD = 0.1


@pytest.fixture(scope="session")
def fairness_summary():
    from fairnorm.benchmark import fairness_direction
    return fairness_direction()


@pytest.fixture(scope="session")
def convergence_summary():
    from fairnorm.benchmark import convergence_direction
    return convergence_direction(fixed_threshold=FIXED_LOSS_THRESHOLD)
