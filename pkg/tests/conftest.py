from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from fujita_lab.manifold import BUILTIN_NAMES, builtin, euclidean

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def flat2():
    return euclidean(2, 1e6)


@pytest.fixture(scope="session")
def flat_wide2():
    # room for dyadic radii up to 2^60 in the certificate tests
    return euclidean(2, 2.0 ** 70)


@pytest.fixture(scope="session", params=BUILTIN_NAMES)
def builtin_family(request):
    m, fam = builtin(request.param)
    return request.param, m, fam
