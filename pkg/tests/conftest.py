import numpy as np
import pytest

from patchcpc.data import generate_synthetic


@pytest.fixture(scope="session")
def tiny_store():
    """24 synthetic images, 32px: enough for train/valid/test smoke runs."""
    return generate_synthetic(12, image_size=32, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
