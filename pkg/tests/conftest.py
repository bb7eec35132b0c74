import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "deterministic",
    derandomize=True,
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("deterministic")

DATA_DIR_IMPORT = "segservo.data"


@pytest.fixture(scope="session")
def data_dir():
    from importlib import resources

    with resources.as_file(resources.files("segservo") / "data") as p:
        yield p


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


def random_mask(rng, height, width, p=0.3):
    from segservo.masks import BinaryMask

    return BinaryMask(rng.random((height, width)) < p)
