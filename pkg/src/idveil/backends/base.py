"""Uniform interfaces for the five neural components the attacks differentiate
through or query: latent codec, face embedder, feature extractor, joint
text/image embedder, and instruction editor.

Differentiable components are dual-mode: they accept either a plain ndarray
(value computation) or an autodiff ``Node`` (gradient graph), returning the
matching kind. The editor is never differentiated and works on arrays only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from idveil.core import ArgumentError, RngState


class BackendLoadError(RuntimeError):
    """A backend component could not be constructed (missing weights/deps)."""


@dataclass(frozen=True)
class EditParams:
    """Editing hyperparameters (image size, steps, guidance scales)."""

    image_size: int = 512
    inference_steps: int = 50
    image_guidance: float = 1.5
    text_guidance: float = 7.5

    def __post_init__(self):
        if self.image_size < 1 or self.inference_steps < 1:
            raise ArgumentError("image_size and inference_steps must be positive")


class LatentCodec(Protocol):
    def encode(self, x): ...

    def decode(self, z): ...


class FaceEmbedder(Protocol):
    def embed(self, x): ...

    def similarity(self, a, b) -> float: ...

    def detect_region(self, x) -> tuple[int, int, int, int] | None:
        """Face bounding box (top, left, bottom, right) or None if no face."""
        ...


class FeatureExtractor(Protocol):
    layer_weights: tuple[float, ...]

    def features(self, x) -> list: ...


class TextImageEmbedder(Protocol):
    def embed_image(self, x): ...

    def embed_text(self, text: str) -> np.ndarray: ...


class InstructionEditor(Protocol):
    def edit(self, x, prompt: str, params: EditParams, rng: RngState) -> np.ndarray: ...


@dataclass(frozen=True)
class BackendBundle:
    """The five model interfaces bound to either real or toy implementations."""

    codec: LatentCodec
    face: FaceEmbedder
    feat: FeatureExtractor
    clip: TextImageEmbedder
    editor: InstructionEditor
    kind: str = "toy"

    def __post_init__(self):
        if self.kind not in ("toy", "real"):
            raise ArgumentError(f"bundle kind must be 'toy' or 'real', got {self.kind!r}")
        for name in ("codec", "face", "feat", "clip", "editor"):
            if getattr(self, name) is None:
                raise ArgumentError(f"bundle is missing component {name!r}")


def face_region_mask(face: FaceEmbedder, x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Binary (H, W, 1) mask of the facial region, from the embedder's detector.

    Returns (mask, face_found). When no face is detected the mask is all ones
    and a warning is emitted: protection then acts globally.
    """
    h, w = x.shape[0], x.shape[1]
    box = face.detect_region(x)
    if box is None:
        warnings.warn("no face detected; using full-image mask", stacklevel=2)
        return np.ones((h, w, 1)), False
    top, left, bottom, right = box
    mask = np.zeros((h, w, 1))
    mask[max(top, 0) : min(bottom, h), max(left, 0) : min(right, w)] = 1.0
    return mask, True
