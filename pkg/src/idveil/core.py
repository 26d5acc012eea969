"""Pixel-space and perturbation-space primitives shared by every other module.

Images are float64 numpy arrays of shape (H, W, 3) with values in [0, 1].
Perturbations are additive tensors of the same shape, bounded in L-infinity
norm by a budget epsilon on the same [0, 1] pixel scale (0.02 ~ 5/255).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


class ArgumentError(ValueError):
    """Raised when an operation receives arguments violating its contract."""


def as_image(data: np.ndarray) -> np.ndarray:
    """Validate and return an image tensor: float64, shape (H, W, 3), values in [0, 1]."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ArgumentError(f"image must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ArgumentError(f"image must have positive height/width, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ArgumentError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ArgumentError(
            f"image values must lie in [0, 1], got range [{arr.min()}, {arr.max()}]"
        )
    return arr


@dataclass(frozen=True)
class Perturbation:
    """Additive perturbation with its L-infinity budget and provenance tag."""

    delta: np.ndarray
    epsilon: float
    method_tag: str = ""

    def __post_init__(self):
        if self.epsilon < 0:
            raise ArgumentError(f"epsilon must be nonnegative, got {self.epsilon}")

    @property
    def linf(self) -> float:
        return float(np.abs(self.delta).max()) if self.delta.size else 0.0


@dataclass(frozen=True)
class RngState:
    """Deterministic random stream: identical (seed, label) gives bit-identical draws.

    Streams are derived, never shared: ``child(label)`` produces an independent
    substream whose draws depend only on (seed, full label path).
    """

    seed: int
    label: str = "root"

    def child(self, label: str) -> "RngState":
        return RngState(self.seed, f"{self.label}/{label}")

    def generator(self) -> np.random.Generator:
        digest = hashlib.sha256(f"{self.seed}:{self.label}".encode("utf-8")).digest()
        words = [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 16, 8)]
        return np.random.Generator(np.random.Philox(key=words))


def clip_linf(delta: np.ndarray, epsilon: float) -> np.ndarray:
    """Project a perturbation onto the L-infinity ball of radius epsilon.

    Elements already inside the ball are unchanged; the projection is
    exactly idempotent.
    """
    if epsilon < 0:
        raise ArgumentError(f"epsilon must be nonnegative, got {epsilon}")
    return np.clip(np.asarray(delta, dtype=np.float64), -epsilon, epsilon)


def clamp_pixels(x: np.ndarray) -> np.ndarray:
    """Clamp pixel values to [0, 1]. Idempotent."""
    return np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)


def project_perturbation(
    x: np.ndarray, delta: np.ndarray, epsilon: float
) -> tuple[np.ndarray, np.ndarray]:
    """Jointly enforce the budget and pixel-validity constraints.

    Returns (protected, delta) such that, exactly in float64 arithmetic:
    ``protected - x == delta`` elementwise, ``|delta| <= epsilon``, and
    ``protected`` in [0, 1]. A plain clip-then-clamp sequence can overshoot
    epsilon by a few ulps when the difference is recomputed from the stored
    arrays (the rounding error of x + delta lives on the scale of x, not of
    delta); offending pixels are walked toward x one ulp at a time, which
    removes the overshoot in one or two steps.
    """
    if epsilon < 0:
        raise ArgumentError(f"epsilon must be nonnegative, got {epsilon}")
    x = np.asarray(x, dtype=np.float64)
    d = np.clip(np.asarray(delta, dtype=np.float64), -epsilon, epsilon)
    protected = np.clip(x + d, 0.0, 1.0)
    r = protected - x
    for _ in range(64):
        over = np.abs(r) > epsilon
        if not over.any():
            return protected, r
        protected = np.where(over, np.nextafter(protected, x), protected)
        r = protected - x
    raise AssertionError("perturbation projection failed to converge")


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity a.b / (|a||b|) of two equal-length nonzero vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ArgumentError(f"vector lengths differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ArgumentError("cosine similarity undefined for zero-norm vector")
    return float(np.dot(a, b) / (na * nb))


def read_png(path: str | Path) -> np.ndarray:
    """Read an 8-bit RGB image file into a float64 (H, W, 3) array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_png(path: str | Path, x: np.ndarray) -> None:
    """Write an image tensor as 8-bit RGB PNG, rounding half to even."""
    arr = as_image(x)
    q = np.rint(arr * 255.0).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path, format="PNG")
