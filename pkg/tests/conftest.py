import numpy as np
import pytest

from scoregc.data import gen_two_gaussians
from scoregc.sde import Family, SdeSpec
from scoregc.training import TrainConfig, train


@pytest.fixture(scope="session")
def toy_train():
    # 2000 samples: means (+-2, 0), identity covariance
    return gen_two_gaussians(1000, seed=1)


@pytest.fixture(scope="session")
def toy_test():
    return gen_two_gaussians(250, seed=2)


@pytest.fixture(scope="session")
def trained_vp(toy_train):
    """VP model trained with the default configuration; shared by several modules."""
    spec = SdeSpec(family=Family.VP)
    net, report = train(toy_train, spec, TrainConfig(seed=0))
    return spec, net, report


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
