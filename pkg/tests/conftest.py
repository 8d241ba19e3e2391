from __future__ import annotations

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def listings_dir():
    import afkit
    return os.path.join(os.path.dirname(afkit.__file__), "data", "listings")
