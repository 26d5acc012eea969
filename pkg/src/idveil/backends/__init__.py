from idveil.backends.base import (
    BackendBundle,
    BackendLoadError,
    EditParams,
    face_region_mask,
)
from idveil.backends.real import real_bundle
from idveil.backends.toy import make_toy_bundle

__all__ = [
    "BackendBundle",
    "BackendLoadError",
    "EditParams",
    "face_region_mask",
    "make_toy_bundle",
    "real_bundle",
]
