import numpy as np
import pytest

from stainad.image import GrayImage


@pytest.fixture
def flat_image():
    """64x64 mid-gray canvas: the simplest valid corruption target."""
    return GrayImage(np.full((64, 64), 0.5, dtype=np.float32))


@pytest.fixture
def textured_image():
    """64x64 deterministic gradient so reconstruction errors are non-trivial."""
    g = np.linspace(0.1, 0.9, 64, dtype=np.float32)
    return GrayImage(np.clip(np.outer(g, g[::-1]) + 0.2, 0.0, 1.0).astype(np.float32))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
