import numpy as np
import pytest


def smooth_image(rng, h, w, passes=4, lift=0.0):
    """Random image smoothed by repeated 3-tap box blurs, rescaled to [0, 1]."""
    f = rng.standard_normal((h, w))
    for _ in range(passes):
        f = (np.roll(f, 1, 0) + f + np.roll(f, -1, 0)) / 3.0
        f = (np.roll(f, 1, 1) + f + np.roll(f, -1, 1)) / 3.0
    f = f - f.min()
    peak = f.max()
    if peak > 0:
        f = f / peak
    return f + lift


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
