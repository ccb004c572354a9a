import os

import numpy as np
import pytest

from strata_nerf.scenegen import make_preset, write_dataset
from strata_nerf.selfcheck import tiny_model


def pytest_collection_modifyitems(config, items):
    if os.environ.get("STRATA_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow acceptance run; set STRATA_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return tiny_model


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Two-level preset at 8x8 with 3/1/2 views per level."""
    scene = make_preset("two-level", resolution=8, counts=(3, 1, 2))
    return write_dataset(scene, tmp_path_factory.mktemp("two-level"), seed=7)
