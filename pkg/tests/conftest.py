import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tdhtr.data import SyntheticDatasetSpec, generate_dataset

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_splits():
    spec = SyntheticDatasetSpec(n_train=24, n_val=8, n_test=8, min_glyphs=2, max_glyphs=4, seed=7)
    return generate_dataset(spec)
