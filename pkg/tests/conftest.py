import numpy as np
import pytest

from noisetrain.data import gen_spirals, split
from noisetrain.network import Batch, ModelSpec, init_params
from noisetrain.tensorcore import RngStream


@pytest.fixture(scope="session")
def spirals_splits():
    ds = gen_spirals(3, 200, 0.05, RngStream(0, "init"))
    return split(ds, (0.6, 0.2, 0.2), RngStream(0, "data-shuffle"))


@pytest.fixture
def tiny_model():
    spec = ModelSpec(2, (8,), 3)
    params = init_params(spec, RngStream(7, "init"))
    return spec, params


def random_batch(spec: ModelSpec, m: int, seed: int = 0) -> Batch:
    rng = np.random.default_rng(seed)
    return Batch(rng.normal(size=(m, spec.input_dim)),
                 rng.integers(0, spec.num_classes, size=m))
