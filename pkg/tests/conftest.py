import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ssat.datagen.faces import generate_face
from ssat.layers import NetWidths
from ssat.network import SSATModel

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk_model():
    return SSATModel(NetWidths.desk(), seed=0)


@pytest.fixture(scope="session")
def faces():
    """A bare target and two makeup references at desk size."""
    return (
        generate_face(11, domain="non_makeup"),
        generate_face(12, domain="makeup"),
        generate_face(13, domain="makeup"),
    )


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
