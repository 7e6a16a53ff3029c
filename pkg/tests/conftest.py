import math

import numpy as np
import pytest

from detcomm.scheme import OPTIMAL, SIMPLE, build_bases, random_params
from detcomm.statevec import make_rng

ACCEPTANCE_LINES = pytest.StashKey[list]()


def within_sigma(observed: float, expected: float, sigma: float, k: float = 3.0) -> bool:
    return abs(observed - expected) <= k * sigma


def binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(p * (1 - p) / n)


@pytest.fixture
def rng():
    return make_rng(20240611)


@pytest.fixture(scope="session")
def optimal_bases():
    return build_bases(OPTIMAL)


@pytest.fixture(scope="session")
def simple_bases():
    return build_bases(SIMPLE)


@pytest.fixture(scope="session")
def random_param_list():
    r = make_rng(7)
    return [random_params(r) for _ in range(100)]


@pytest.fixture
def unit_vectors():
    return [np.eye(4, dtype=complex)[:, k] for k in range(4)]


@pytest.fixture
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE_LINES, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
