import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_images(rng, n, h=16, w=16):
    return rng.integers(0, 256, size=(n, h, w, 3), dtype=np.uint8)
