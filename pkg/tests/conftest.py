import numpy as np
import pytest

from swarmloc.geometry import DEFAULT_ANCHOR_POSITIONS, sample_random_swarm
from swarmloc.measurement import OtfsGridConfig

# The reference experiments use c = 3e8 so grid steps come out round
# (B = 30 MHz -> 10 m, T_f = 20 ms at 5 GHz -> 3 m/s).
C_REF = 3e8


def paper_grid(bandwidth=30e6, frame_duration=20e-3, carrier=5e9):
    return OtfsGridConfig(
        bandwidth=bandwidth, frame_duration=frame_duration, carrier=carrier, c=C_REF
    )


def make_swarm(seed, n=8, a=4, pos_mean=500.0, pos_std=1000.0 / np.sqrt(12.0), vel_std=10.0):
    return sample_random_swarm(
        n, a, pos_mean, pos_std, vel_std, DEFAULT_ANCHOR_POSITIONS[:a], seed
    )


@pytest.fixture
def grid30():
    return paper_grid(30e6)


@pytest.fixture
def swarm8():
    return make_swarm(42)
