from __future__ import annotations

import numpy as np
import pytest

from taskblend import kernels

BACKENDS = ["python"] + (["compiled"] if kernels.compiled_available() else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    """Run the test once per available kernel backend."""
    with kernels.use_backend(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
