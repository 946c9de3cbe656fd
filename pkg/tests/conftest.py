import pytest

from tvsense.channel import SystemConfig


@pytest.fixture
def cfg8():
    return SystemConfig(n_subcarriers=8, n_blocks=8)
