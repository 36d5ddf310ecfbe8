import numpy as np
import pytest
import torch

from glyphdiff.schedule import build_linear_schedule
from glyphdiff.text import HashTextEncoder
from glyphdiff.unet import UNetConfig

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def encoder():
    return HashTextEncoder(dim=32)


@pytest.fixture(scope="session")
def tiny_config():
    return UNetConfig(base_channels=8, channel_multipliers=(1, 2, 2, 2),
                      attention_heads=2, text_dim=32)


@pytest.fixture(scope="session")
def schedule_T20():
    return build_linear_schedule(20, 1e-4, 0.02)


@pytest.fixture(scope="session")
def schedule_T1000():
    return build_linear_schedule(1000, 1e-4, 0.02)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
