import numpy as np
import pytest

from snnbench.core import LifParams, NetworkConfig, init_network


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_net():
    cfg = NetworkConfig(6, (5, 4), 3, lif=LifParams(0.8, 0.6, 0.3))
    return init_network(cfg, 7)


@pytest.fixture
def small_rec_net():
    cfg = NetworkConfig(6, (5, 4), 3, recurrent=True, lif=LifParams(0.8, 0.6, 0.3))
    return init_network(cfg, 7)


def random_spikes(rng, T, C, p=0.4):
    return (rng.random((T, C)) < p).astype(np.float64)


# PASS/FAIL lines appended by the acceptance tests
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
