import numpy as np
import pytest

from hierbench.netcore import make_classifier
from hierbench.synthdata import SynthConfig, gen_data, gen_tree


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow training reproductions")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def t1():
    """Balanced binary tree, leaves 0..7, H = 4"""
    return gen_tree([2, 2, 2])


@pytest.fixture
def small_net():
    def factory(input_dim, n_classes, seed=0, width=6, layers=1):
        return make_classifier(input_dim, n_classes, width, layers, np.random.default_rng(seed))

    return factory


@pytest.fixture
def t1_dataset(t1):
    cfg = SynthConfig(dim=6, sigma_levels=[0.3, 0.1, 0.05], noise_sigma=0.02, samples_per_leaf=12, seed=3)
    return gen_data(cfg, t1)
