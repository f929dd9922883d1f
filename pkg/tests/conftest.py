import os

import numpy as np
import pytest

from ivpb.grids import build_spatial_grid, build_velocity_grid


def pytest_collection_modifyitems(config, items):
    if os.environ.get("IVPB_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow experiment; set IVPB_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def vgrid8():
    return build_velocity_grid(8, 6.0)


@pytest.fixture(scope="session")
def vgrid12():
    return build_velocity_grid(12, 6.0)


@pytest.fixture(scope="session")
def vgrid16():
    return build_velocity_grid(16, 6.0)


@pytest.fixture(scope="session")
def sgrid16():
    return build_spatial_grid(1, 16, 2.0 * np.pi)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
