import warnings

import numpy as np
import pytest

from smoothcert.classifier import Classifier, TrainConfig, train
from smoothcert.data import Toy2DConfig, gen_toy2d, train_test_split
from smoothcert.errors import EigenvalueDegeneracy


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet_degeneracy():
    # sigma* I is the usual starting point, so the repeated-eigenvalue warning is expected
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EigenvalueDegeneracy)
        yield


def threshold_model(b: float, steepness: float = 1e4) -> Classifier:
    """1D two-class model: class 0 iff x < b (a logistic step of the given steepness)."""
    w = np.array([[-steepness, steepness]]) / 2
    bias = np.array([steepness * b, -steepness * b]) / 2
    return Classifier([w], [bias])


def band_model(b: float, k: float = 20.0, c: float = 10.0) -> Classifier:
    """1D two-class model: class 0 iff |x| < b."""
    w1 = np.array([[k, -k]])
    b1 = np.array([k * b, k * b])
    w2 = np.array([[c, 0.0], [c, 0.0]])
    b2 = np.array([0.0, c])
    return Classifier([w1, w2], [b1, b2])


@pytest.fixture(scope="session")
def toy_split():
    return train_test_split(gen_toy2d(Toy2DConfig(num_per_class=200)), 0.8, 0)


@pytest.fixture(scope="session")
def toy_model(toy_split):
    tr, _ = toy_split
    return train(tr.x, tr.y, TrainConfig(sigma_aug=0.25, epochs=60, batch_size=32, seed=0), 3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
