"""Input transformations an adversary may apply to strip protection before
editing: Gaussian blur (k=5, sigma=1.5), random rotation in (-10, 10) degrees,
baseline JPEG recompression, color jitter, plus a pluggable external-purifier
hook (e.g. a diffusion purifier exposed as a command).

All transforms keep the image shape (rotation uses a same-size canvas with
reflect fill) and return valid [0, 1] tensors. Rotation and jitter draw their
parameters from the transform spec's rng, so a fixed RngState reproduces the
output bit for bit. JPEG routes through a real baseline codec; byte-exactness across
platforms is not promised, only bounded reconstruction error.
"""

from __future__ import annotations

import io
import shlex
import subprocess
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from idveil import autodiff as ad
from idveil.core import ArgumentError, RngState, clamp_pixels

PURIFY_KINDS = ("none", "blur", "rotate", "jpeg", "color_jitter", "external")

# ITU-R 601 luma weights, used for saturation/contrast adjustments
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class PurifySpec:
    """One purification transform and its parameters."""

    kind: str = "none"
    blur_kernel: int = 5
    blur_sigma: float = 1.5
    rotate_range: tuple = (-10.0, 10.0)
    jpeg_quality: int = 75
    jitter_brightness: tuple = (0.8, 1.2)
    jitter_contrast: tuple = (0.8, 1.2)
    jitter_saturation: tuple = (0.8, 1.2)
    external_command: str | None = None
    rng: RngState = field(default_factory=lambda: RngState(0, "purify"))

    def __post_init__(self):
        if self.kind not in PURIFY_KINDS:
            raise ArgumentError(f"unknown purification kind {self.kind!r}; known: {PURIFY_KINDS}")
        if self.kind == "blur" and (self.blur_kernel < 1 or self.blur_kernel % 2 == 0):
            raise ArgumentError("blur kernel must be odd and positive")
        if self.kind == "jpeg" and not (1 <= self.jpeg_quality <= 100):
            raise ArgumentError(f"jpeg quality must be in [1, 100], got {self.jpeg_quality}")

    @property
    def label(self) -> str:
        """Short identifier used in records and file names."""
        if self.kind == "jpeg":
            return f"jpeg{self.jpeg_quality}"
        return self.kind


def _jpeg_roundtrip(x: np.ndarray, quality: int) -> np.ndarray:
    q = np.rint(x * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(q, mode="RGB").save(buf, format="JPEG", quality=quality)
    buf.seek(0)
    with Image.open(buf) as im:
        back = np.asarray(im.convert("RGB"), dtype=np.float64)
    return back / 255.0


def _color_jitter(x: np.ndarray, spec: PurifySpec, gen: np.random.Generator) -> np.ndarray:
    fb = float(gen.uniform(*spec.jitter_brightness))
    fc = float(gen.uniform(*spec.jitter_contrast))
    fs = float(gen.uniform(*spec.jitter_saturation))
    y = x * fb
    mean = float((y @ _LUMA).mean())
    y = mean + (y - mean) * fc
    gray = (y @ _LUMA)[..., None]
    y = gray + (y - gray) * fs
    return y


def _external(x: np.ndarray, spec: PurifySpec) -> np.ndarray:
    from idveil.core import read_png, write_png

    if not spec.external_command:
        warnings.warn("external purifier not configured; passing image through", stacklevel=3)
        return x.copy()
    try:
        with tempfile.TemporaryDirectory(prefix="idveil-purify-") as tmp:
            src = Path(tmp) / "in.png"
            dst = Path(tmp) / "out.png"
            write_png(src, x)
            subprocess.run(
                shlex.split(spec.external_command) + [str(src), str(dst)],
                check=True,
                capture_output=True,
                timeout=600,
            )
            return read_png(dst)
    except Exception as exc:
        warnings.warn(
            f"external purifier unreachable ({exc.__class__.__name__}: {exc}); "
            "passing image through",
            stacklevel=3,
        )
        return x.copy()


def purify(x: np.ndarray, spec: PurifySpec) -> np.ndarray:
    """Apply one purification transform to an image."""
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == "none":
        return x.copy()
    if spec.kind == "blur":
        return clamp_pixels(ad.gaussian_blur(x, spec.blur_kernel, spec.blur_sigma))
    if spec.kind == "rotate":
        gen = spec.rng.generator()
        angle = float(gen.uniform(spec.rotate_range[0], spec.rotate_range[1]))
        return clamp_pixels(ad.rotate_bilinear(x, angle))
    if spec.kind == "jpeg":
        return _jpeg_roundtrip(x, spec.jpeg_quality)
    if spec.kind == "color_jitter":
        gen = spec.rng.generator()
        return clamp_pixels(_color_jitter(x, spec, gen))
    if spec.kind == "external":
        return _external(x, spec)
    raise ArgumentError(f"unknown purification kind {spec.kind!r}")
