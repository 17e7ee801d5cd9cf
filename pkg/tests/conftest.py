import numpy as np
import pytest

from octmri import tensor as T


@pytest.fixture(autouse=True)
def _reset_tensor_globals():
    # tests may flip precision/validation; never leak across tests
    yield
    T.set_default_dtype(np.float32)
    T.set_checked(True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
