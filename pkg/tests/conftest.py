import pytest
import torch

from handocc.model import NetworkConfig
from handocc.synth import generate_synthetic_sample


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)


@pytest.fixture
def sample64():
    return generate_synthetic_sample(7, "bar", size=64)


@pytest.fixture
def sample96():
    return generate_synthetic_sample(3, "paddle", size=96)


@pytest.fixture
def tiny_config():
    """Slim widths keep network unit tests fast; contracts are unchanged."""
    return NetworkConfig(encoder_channels=(8, 16, 24, 32, 40))
