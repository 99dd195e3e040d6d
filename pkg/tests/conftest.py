import numpy as np
import pytest

from theta_dse.design_space import DesignSpace, Dimension, uniform_space


@pytest.fixture
def space_3dim() -> DesignSpace:
    return DesignSpace(
        "toy3",
        [
            Dimension("a", ("a0", "a1", "a2")),
            Dimension("b", ("b0", "b1", "b2", "b3")),
            Dimension("c", ("c0", "c1")),
        ],
    )


@pytest.fixture
def space_1x2() -> DesignSpace:
    return uniform_space("bandit", 1, 2)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
