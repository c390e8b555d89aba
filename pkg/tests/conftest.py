import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dictpbdw import (advection_diffusion_lite, build_observation, sensor_pattern,  # noqa: E402
                      sensors_radial, thermal_block)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def thermal():
    return thermal_block(33)


@pytest.fixture(scope="session")
def thermal_obs36(thermal):
    space, model = thermal
    return build_observation(space, sensors_radial(space, model.mesh, sensor_pattern("m36")))


@pytest.fixture(scope="session")
def advection():
    return advection_diffusion_lite()


@pytest.fixture(scope="session")
def small_thermal():
    space, model = thermal_block(9)
    obs = build_observation(space, sensors_radial(space, model.mesh, sensor_pattern("m9")))
    return space, model, obs
