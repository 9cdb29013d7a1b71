import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    from singsde.noise import RngStream
    return RngStream(2024, "tests")


def gbm_fields(mu, theta):
    from singsde.registry import build_field
    return (build_field({"name": "linear-drift", "mu": mu}),
            build_field({"name": "linear-diffusion", "theta": theta}))
