import numpy as np
import pytest

from fairnav.nets.bundle import MlpSpec, PolicyBundle


@pytest.fixture(scope="session")
def small_spec():
    return MlpSpec(trunk=32, head=32, feat=8, embed=8)


@pytest.fixture()
def small_bundle(small_spec):
    return PolicyBundle(small_spec, seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
