import numpy as np
import pytest
from hypothesis import settings

from jointbci.signal import ChannelLayout, Epoch, Label

settings.register_profile("ci", deadline=None, max_examples=60)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_epochs(rng, n=4, channels=("C3", "Cz", "C4"), samples=50, fs=100.0):
    layout = ChannelLayout(tuple(channels), "CPz")
    return [Epoch(rng.standard_normal((len(channels), samples)).astype(np.float32).astype(float),
                  Label.LEFT if i % 2 == 0 else Label.RIGHT, fs, layout) for i in range(n)]
