import numpy as np
import pytest

from storybooth.masks import TokenGrid, plan_masks
from storybooth.plan import StoryPrompt, mock_plan


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def story4():
    return mock_plan(StoryPrompt("two friends go on a trip", 4), 2, seed=3)


@pytest.fixture
def masks4x4(story4):
    return plan_masks(story4, TokenGrid(4, 4, 4))
