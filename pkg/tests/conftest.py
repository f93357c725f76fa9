import numpy as np
import pytest

from snlsr.netgen import NetworkConfig, generate_instance

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_instance():
    return generate_instance(NetworkConfig(n_sensors=50, n_anchors=5, radio_range=0.3, noise_level=0.0, rng_seed=7))


@pytest.fixture(scope="session")
def noisy_instance():
    return generate_instance(NetworkConfig(n_sensors=120, n_anchors=12, radio_range=0.3, noise_level=0.1, rng_seed=3))
