import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hrtf_dunet import data, sh

settings.register_profile(
    "repo", max_examples=25, deadline=None, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))

# lines collected by the acceptance tests, printed once at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(scope="session")
def grid100():
    return sh.fibonacci_grid(100)


@pytest.fixture(scope="session")
def subject(grid100):
    return data.synth_subject(data.SynthConfig(seed=3), grid100)


@pytest.fixture(scope="session")
def subject_hrtf(subject):
    return data.hrir_to_hrtf(subject)
