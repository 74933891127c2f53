import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from missbias.models import ModelKind, SyntheticSpec, TrainConfig, gen_synthetic_clusters, train_model

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def clusters():
    """Default origin-attractor dataset (m = 3, n = 16)."""
    return gen_synthetic_clusters(SyntheticSpec(seed=0))


@pytest.fixture(scope="session")
def mlp(clusters):
    return train_model(clusters, ModelKind.MLP, TrainConfig(seed=0))


@pytest.fixture(scope="session")
def small_clusters():
    return gen_synthetic_clusters(SyntheticSpec(m=3, n=6, samples_per_class=60, seed=4))


@pytest.fixture(scope="session")
def small_linear(small_clusters):
    return train_model(small_clusters, ModelKind.SOFTMAX_REGRESSION, TrainConfig(steps=200, seed=4))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
