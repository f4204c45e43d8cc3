import numpy as np
import pytest

from wrenchest import load_reference_model


@pytest.fixture(scope="session")
def model():
    return load_reference_model()


def random_states(model, n, seed, dq_scale=1.0, ddq_max=8.0):
    """Joint states uniform inside limits; generator shared across suites."""
    rng = np.random.default_rng(seed)
    q = rng.uniform(model.q_min, model.q_max, size=(n, 6))
    dq = rng.uniform(-model.dq_max, model.dq_max, size=(n, 6)) * dq_scale
    ddq = rng.uniform(-ddq_max, ddq_max, size=(n, 6))
    return q, dq, ddq
