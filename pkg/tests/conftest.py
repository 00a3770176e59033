import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from willmore_lab.metrics import AmbientMetric, gaussian_bump
from willmore_lab.sphere import SphereGrid


@pytest.fixture(scope="session")
def grid16():
    return SphereGrid(17, 16)


@pytest.fixture(scope="session")
def grid24():
    return SphereGrid(25, 24)


@pytest.fixture(scope="session")
def bump():
    return gaussian_bump()


@pytest.fixture(scope="session")
def bump_full():
    return gaussian_bump(amplitude=np.array([[1.0, 0.3, 0.0],
                                             [0.3, 0.5, 0.2],
                                             [0.0, 0.2, -0.4]]))


@pytest.fixture(scope="session")
def flat(bump):
    return AmbientMetric(bump, 0.0)


@pytest.fixture(scope="session")
def curved(bump):
    return AmbientMetric(bump, 1e-2)
