"""Deterministic toy backends: small fixed-random-weight differentiable
networks standing in for the real neural components, sized for desk-scale
verification of the optimization and metric machinery.
"""

from __future__ import annotations

import hashlib
import zlib

import numpy as np

from idveil import autodiff as ad
from idveil.backends.base import BackendBundle, EditParams
from idveil.core import ArgumentError, RngState, clamp_pixels, cosine_sim

TOY_SIZES = (16, 32, 64)
LATENT_CHANNELS = 4


def _conv_w(gen: np.random.Generator, kh, kw, cin, cout, gain=1.0):
    return gen.standard_normal((kh, kw, cin, cout)) * (gain / np.sqrt(kh * kw * cin))


class ToyLatentCodec:
    """2-layer strided conv encoder with a mirrored transposed-conv decoder.

    Latent grid is H/4 x W/4 x 4; decode ends in a sigmoid so round-trips are
    valid images. Deterministic: no posterior sampling anywhere. The latent
    scale is deliberately compressed (encoder output down, decoder input up,
    round-trip unchanged) so latent-loss gradients do not drown the face and
    feature terms in the combined objectives at this scale.
    """

    LATENT_GAIN = 0.3

    def __init__(self, gen: np.random.Generator):
        self.w_enc1 = _conv_w(gen, 3, 3, 3, 8)
        self.w_enc2 = _conv_w(gen, 3, 3, 8, LATENT_CHANNELS, gain=self.LATENT_GAIN)
        self.w_dec1 = _conv_w(gen, 3, 3, 8, LATENT_CHANNELS, gain=1.0 / self.LATENT_GAIN)
        self.w_dec2 = _conv_w(gen, 3, 3, 3, 8)

    def encode(self, x):
        h = ad.tanh(ad.conv2d(x, self.w_enc1, stride=2, pad=1))
        return ad.conv2d(h, self.w_enc2, stride=2, pad=1)

    def decode(self, z):
        h = ad.tanh(ad.conv2d_transpose(z, self.w_dec1, stride=2, pad=1, out_pad=1))
        return ad.sigmoid(ad.conv2d_transpose(h, self.w_dec2, stride=2, pad=1, out_pad=1))


class ToyFaceEmbedder:
    """Small conv net with global pooling into a 16-dim identity embedding.

    Two normalizations make the cosine behave like a recognizer rather than a
    color histogram: a partial per-channel mean removal on the input (cheap
    illumination constancy, so global recolors barely move the identity) and
    a partial subtraction of the mid-gray response from the pooled features
    (removes the shared DC component that would otherwise pin all cosines
    near 1). Both are partial so constant images still embed to a nonzero
    vector. Conv gains are raised so the embedding responds measurably to
    budget-sized pixel changes."""

    INPUT_CENTERING = 0.5
    ANCHOR_FRACTION = 0.4

    def __init__(self, gen: np.random.Generator, image_size: int = 32):
        self.w1 = _conv_w(gen, 3, 3, 3, 8, gain=3.0)
        self.w2 = _conv_w(gen, 3, 3, 8, 16, gain=3.0)
        gray = np.full((image_size, image_size, 3), 0.5)
        self._anchor = self.ANCHOR_FRACTION * self._pool(gray)

    def _pool(self, x):
        x = ad.sub(x, ad.mul(ad.global_mean(x), self.INPUT_CENTERING))
        h = ad.tanh(ad.conv2d(x, self.w1, stride=2, pad=1))
        h = ad.tanh(ad.conv2d(h, self.w2, stride=2, pad=1))
        return ad.global_mean(h)

    def embed(self, x):
        return ad.sub(self._pool(x), self._anchor)

    def similarity(self, a, b) -> float:
        return cosine_sim(self.embed(a), self.embed(b))

    def detect_region(self, x):
        # centered rectangle covering 50% of each dimension
        h, w = x.shape[0], x.shape[1]
        return h // 4, w // 4, h // 4 + h // 2, w // 4 + w // 2


class ToyFeatureExtractor:
    """Three conv stages exposed as a perceptual feature pyramid."""

    def __init__(self, gen: np.random.Generator):
        self.w1 = _conv_w(gen, 3, 3, 3, 8, gain=2.0)
        self.w2 = _conv_w(gen, 3, 3, 8, 12, gain=2.0)
        self.w3 = _conv_w(gen, 3, 3, 12, 16, gain=2.0)
        self.layer_weights = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)

    def features(self, x):
        f1 = ad.tanh(ad.conv2d(x, self.w1, stride=1, pad=1))
        f2 = ad.tanh(ad.conv2d(f1, self.w2, stride=2, pad=1))
        f3 = ad.tanh(ad.conv2d(f2, self.w3, stride=2, pad=1))
        return [f1, f2, f3]


class ToyTextImageEmbedder:
    """Conv image head and hash-based bag-of-tokens text head sharing a
    32-dim embedding space."""

    VOCAB_BUCKETS = 64
    DIM = 32

    def __init__(self, gen: np.random.Generator):
        self.w1 = _conv_w(gen, 3, 3, 3, 8)
        self.w2 = _conv_w(gen, 3, 3, 8, 16)
        self.proj_img = gen.standard_normal((self.DIM, 16)) / 4.0
        self.proj_txt = gen.standard_normal((self.DIM, self.VOCAB_BUCKETS)) / 8.0

    def embed_image(self, x):
        h = ad.tanh(ad.conv2d(x, self.w1, stride=2, pad=1))
        h = ad.tanh(ad.conv2d(h, self.w2, stride=2, pad=1))
        return ad.matvec(ad.global_mean(h), self.proj_img)

    def embed_text(self, text: str) -> np.ndarray:
        counts = np.zeros(self.VOCAB_BUCKETS)
        for token in text.lower().split():
            token = token.strip(".,!?;:'\"()")
            if token:
                counts[zlib.crc32(token.encode("utf-8")) % self.VOCAB_BUCKETS] += 1.0
        return self.proj_txt @ counts


class ToyInstructionEditor:
    """Codec round-trip plus a prompt-hash-seeded smooth color/warp field.

    Edits depend visibly on both the prompt and the input image and are
    bit-reproducible for a fixed RngState. No diffusion loop is simulated;
    this is deliberately cheap.
    """

    FIELD_RES = 4

    def __init__(self, codec: ToyLatentCodec):
        self._codec = codec

    def edit(self, x: np.ndarray, prompt: str, params: EditParams, rng: RngState) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        h, w = x.shape[0], x.shape[1]
        y = self._codec.decode(self._codec.encode(x))

        tag = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]
        gen = rng.child(f"edit-{tag}").generator()
        k = self.FIELD_RES
        gain = ad.bilinear_resize(gen.standard_normal((k, k, 3)), h, w)
        bias = ad.bilinear_resize(gen.standard_normal((k, k, 3)), h, w)
        disp = ad.bilinear_resize(gen.standard_normal((k, k, 2)), h, w)

        strength = params.text_guidance / 7.5
        y = y * (1.0 + 0.20 * strength * gain) + 0.10 * strength * bias

        amp = 1.5 * strength / max(params.image_guidance, 0.1)
        yy, xx = np.meshgrid(
            np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij"
        )
        y = ad.sample_bilinear(y, yy + amp * disp[..., 0], xx + amp * disp[..., 1])
        return clamp_pixels(y)


def make_toy_bundle(seed: int, image_size: int = 32) -> BackendBundle:
    """Build the fixed-weight toy bundle for a supported image size."""
    if image_size not in TOY_SIZES:
        raise ArgumentError(f"toy image_size must be one of {TOY_SIZES}, got {image_size}")
    root = RngState(seed, "toy-bundle")
    codec = ToyLatentCodec(root.child("codec").generator())
    return BackendBundle(
        codec=codec,
        face=ToyFaceEmbedder(root.child("face").generator(), image_size),
        feat=ToyFeatureExtractor(root.child("feat").generator()),
        clip=ToyTextImageEmbedder(root.child("clip").generator()),
        editor=ToyInstructionEditor(codec),
        kind="toy",
    )
