import numpy as np
import pytest

from idveil.backends import make_toy_bundle
from idveil.core import RngState


def probe_image(seed: int, size: int = 32) -> np.ndarray:
    """Canonical random test image; pinned values in the suite assume it."""
    return RngState(seed, "probe-image").generator().uniform(0.0, 1.0, size=(size, size, 3))


@pytest.fixture(scope="session")
def toy32():
    return make_toy_bundle(seed=0, image_size=32)


@pytest.fixture(scope="session")
def toy16():
    return make_toy_bundle(seed=0, image_size=16)
