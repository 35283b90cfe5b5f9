import numpy as np
import pytest
import torch
from torch import nn

from mrsrgan import dataset as ds
from mrsrgan.phantoms import phantom_volume

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{status:<4}  {name}  {detail}")


class IdentityStub(nn.Module):
    scale = (1, 1)

    def forward(self, x):
        return x.clone()


class NearestStub(nn.Module):
    """Repeats rows ``f`` times: nearest-neighbour upscaling of the first spatial axis."""

    def __init__(self, f):
        super().__init__()
        self.scale = (f, 1)

    def forward(self, x):
        return torch.repeat_interleave(x, self.scale[0], dim=2)


class ConstantStub(nn.Module):
    def __init__(self, f, value):
        super().__init__()
        self.scale = (f, 1)
        self.value = value

    def forward(self, x):
        n, c, h, w = x.shape
        return torch.full((n, c, h * self.scale[0], w), self.value)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def phantom():
    return ds.normalize_intensity(phantom_volume((32, 32, 8), seed=3))


@pytest.fixture(scope="session")
def torch_threads():
    torch.set_num_threads(1)
