import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tracksense.grid import RewardParams, TransitionKernel, make_experiment_kernel


def uniform_kernel_2x2(p_exit=0.0) -> TransitionKernel:
    """Every cell moves uniformly over all four cells (minus exit mass)."""
    m = np.zeros((5, 5))
    for i in range(4):
        m[i, :4] = (1.0 - p_exit) / 4.0
        m[i, 4] = p_exit
    m[4, 4] = 1.0
    return TransitionKernel(2, m)


def single_cell_kernel(p_stay=0.9) -> TransitionKernel:
    m = np.array([[p_stay, 1.0 - p_stay], [0.0, 1.0]])
    return TransitionKernel(1, m)


@pytest.fixture(scope="session")
def kernel_2x2_uniform():
    return uniform_kernel_2x2()


@pytest.fixture(scope="session")
def kernel_2x2_exit():
    return uniform_kernel_2x2(p_exit=0.2)


@pytest.fixture(scope="session")
def kernel_4x4():
    return make_experiment_kernel(4, 3, 0.05, 0.15, 41)


@pytest.fixture(scope="session")
def params_default():
    return RewardParams(r=1.0, c=0.2, D=1.8, t_max=2)
