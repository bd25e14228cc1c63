import numpy as np
import pytest

from dvorl.buffer import ActionSpec, ReplayBuffer


def random_buffer(n, m=2, n_actions=4, seed=0, tag="test"):
    rng = np.random.default_rng(seed)
    return ReplayBuffer.from_arrays(
        rng.normal(size=(n, m)),
        rng.integers(0, n_actions, size=n),
        rng.normal(size=(n, m)),
        rng.normal(size=n),
        rng.random(n) < 0.1,
        ActionSpec.discrete(n_actions),
        tag,
    )


@pytest.fixture
def make_buffer():
    return random_buffer
