import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from colontrack.geometry import rotation_about_axis

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# filled by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def random_rotation(rng, max_angle=np.pi):
    axis = rng.normal(size=3)
    return rotation_about_axis(axis, rng.uniform(-max_angle, max_angle))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
