import pytest
from hypothesis import HealthCheck, settings

from fedreg.ahe import keygen
from fedreg.fixedpoint import FpConfig

settings.register_profile(
    "ci",
    derandomize=True,
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def key2048():
    """One 2048-bit default-backend keypair shared across the session."""
    return keygen(2048, 256, "jl", seed=1234)


@pytest.fixture(scope="session")
def key2048_paillier():
    return keygen(2048, 256, "paillier", seed=1234)


@pytest.fixture(scope="session")
def fp():
    return FpConfig()
