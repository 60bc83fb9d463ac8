import numpy as np
import pytest

from trainstab.data import Dataset, MixtureSpec, gen_mixture
from trainstab.nets import NetSpec, init
from trainstab.rng import SeedPlan


@pytest.fixture
def small_spec():
    return NetSpec.make(4, (8, 8), 3)


@pytest.fixture
def small_params(small_spec):
    return init(small_spec, SeedPlan(0).stream("init"))


@pytest.fixture
def small_batch():
    gen = np.random.default_rng(7)
    x = gen.normal(size=(16, 4))
    y = np.arange(16, dtype=np.int64) % 3
    return x, y


@pytest.fixture
def small_dataset(small_batch):
    x, y = small_batch
    return Dataset(x, y, 3)


@pytest.fixture
def tiny_mixture():
    return MixtureSpec(
        classes=3, dim=8, n_train=256, n_test=128,
        separation=4.0, noise_std=0.5, seed=1,
    )


@pytest.fixture
def tiny_data(tiny_mixture):
    return gen_mixture(tiny_mixture)
