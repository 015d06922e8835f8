import sys
import os
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import numpy as np
import pytest
from fastapi.testclient import TestClient

from ustat.main import app
from ustat.schemas.data import SampleSet
from ustat.storage import LocalStorage

@pytest.fixture(scope="function")
def rng():
    return np.random.default_rng(12345)

@pytest.fixture(scope="function")
def small_samples(rng):
    return SampleSet.single(rng.standard_normal((7, 2)), rng.integers(0, 3, size=7))

@pytest.fixture(scope="function")
def two_samples(rng):
    return SampleSet(blocks=(rng.standard_normal((5, 1)), rng.standard_normal((4, 1))))

@pytest.fixture(scope="function")
def storage(tmp_path):
    return LocalStorage(str(tmp_path / "reports"))

@pytest.fixture(scope="function")
def client():
    yield TestClient(app)
