import copy

import numpy as np
import pytest

from fctdse.sim import bundled_scenario_path, load_scenario_dict, run, scenario_from_dict

A_BAR = np.array(
    [
        [-1, 0, 0, 0, 0, 0],
        [-1, 1, 1, 0, 0, 0],
        [1, -2, -1, -1, 1, 1],
        [0, 0, 0, -1, 0, 0],
        [-8, 1, -1, -1, -2, 0],
        [4, -0.5, 0.5, 0, 0, -4],
    ],
    dtype=float,
)
C1_BAR = np.array([[1, 0, 0, 2, 0, 0], [2, 0, 0, 1, 0, 0]], dtype=float)
C2_BAR = np.array([[2, 0, 5, 0, 0, 3]], dtype=float)
X0_BAR = np.array([1, 3, -2, -3, -1, 2], dtype=float)


@pytest.fixture(scope="session")
def sec6_doc():
    return load_scenario_dict(bundled_scenario_path())


@pytest.fixture
def sec6(sec6_doc):
    """Fresh, mutable copy of the bundled two-agent scenario document."""
    return copy.deepcopy(sec6_doc)


@pytest.fixture(scope="session")
def sec6_run(sec6_doc):
    return run(scenario_from_dict(copy.deepcopy(sec6_doc)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda k: int(k)):
        terminalreporter.write_line(RESULTS[key])
