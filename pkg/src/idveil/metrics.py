"""Evaluation metrics, split by what they certify.

Prompt fidelity (did the edit take?): PSNR, SSIM, LPIPS compare the edit of
the protected image against the edit of the unprotected one; CLIP-S compares
the image-embedding shift to the instruction embedding; CLIP-SD compares the
edit directly to a descriptive caption. Image integrity (did the subject
survive?): CLIP-I compares edit to source globally; FR compares face
embeddings, the biometric bottom line.

Direction conventions are from the defender's perspective: a defense wants
LPIPS high and everything else low.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.ndimage import correlate1d

from idveil.autodiff import gaussian_kernel1d
from idveil.backends.base import BackendBundle
from idveil.core import ArgumentError, cosine_sim

PSNR_CAP_DB = 100.0

LOWER = "lower_better_for_defense"
HIGHER = "higher_better_for_defense"
PROMPT_FIDELITY = "prompt_fidelity"
IMAGE_INTEGRITY = "image_integrity"


@dataclass(frozen=True)
class MetricSpec:
    name: str
    group: str
    direction: str


# column order used by every report: the fidelity block (with the
# descriptive-caption score appended) followed by the integrity pair
METRIC_ORDER = ("clip_s", "psnr", "ssim", "lpips", "clip_sd", "clip_i", "fr")

METRICS: "OrderedDict[str, MetricSpec]" = OrderedDict(
    (
        ("clip_s", MetricSpec("clip_s", PROMPT_FIDELITY, LOWER)),
        ("psnr", MetricSpec("psnr", PROMPT_FIDELITY, LOWER)),
        ("ssim", MetricSpec("ssim", PROMPT_FIDELITY, LOWER)),
        ("lpips", MetricSpec("lpips", PROMPT_FIDELITY, HIGHER)),
        ("clip_sd", MetricSpec("clip_sd", PROMPT_FIDELITY, LOWER)),
        ("clip_i", MetricSpec("clip_i", IMAGE_INTEGRITY, LOWER)),
        ("fr", MetricSpec("fr", IMAGE_INTEGRITY, LOWER)),
    )
)


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ArgumentError(f"image shapes differ: {a.shape} vs {b.shape}")


def mse(a: np.ndarray, b: np.ndarray) -> float:
    _check_pair(a, b)
    return float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) on the [0, 1] scale; identical images return the
    100 dB cap so aggregation stays finite."""
    m = mse(a, b)
    if m == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / m)


_SSIM_WIN = 11
_SSIM_SIGMA = 1.5
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2


def _ssim_filter(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    pad = _SSIM_WIN // 2
    t = correlate1d(img, k, axis=0, mode="constant")
    t = correlate1d(t, k, axis=1, mode="constant")
    return t[pad:-pad, pad:-pad]


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM over an 11-tap Gaussian window (sigma 1.5), constants
    C1=0.01^2 and C2=0.03^2 on the [0, 1] range, averaged over channels.
    Border pixels whose window leaves the image are excluded."""
    _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < _SSIM_WIN:
        raise ArgumentError(f"image min dimension must be >= {_SSIM_WIN} for SSIM")
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    k = gaussian_kernel1d(_SSIM_WIN, _SSIM_SIGMA)
    vals = []
    for c in range(a.shape[2]):
        xa, xb = a[..., c], b[..., c]
        mu_a = _ssim_filter(xa, k)
        mu_b = _ssim_filter(xb, k)
        var_a = _ssim_filter(xa * xa, k) - mu_a * mu_a
        var_b = _ssim_filter(xb * xb, k) - mu_b * mu_b
        cov = _ssim_filter(xa * xb, k) - mu_a * mu_b
        s = ((2 * mu_a * mu_b + _SSIM_C1) * (2 * cov + _SSIM_C2)) / (
            (mu_a * mu_a + mu_b * mu_b + _SSIM_C1) * (var_a + var_b + _SSIM_C2)
        )
        vals.append(s.mean())
    return float(np.mean(vals))


def lpips(bundle: BackendBundle, a: np.ndarray, b: np.ndarray) -> float:
    """Perceptual distance: per layer, unit-normalize features along the
    channel axis, take the spatial mean of the squared difference norm, and
    sum with the extractor's layer weights."""
    _check_pair(a, b)
    feats_a = bundle.feat.features(a)
    feats_b = bundle.feat.features(b)
    total = 0.0
    for w, fa, fb in zip(bundle.feat.layer_weights, feats_a, feats_b):
        na = fa / np.sqrt((fa * fa).sum(axis=2, keepdims=True) + 1e-10)
        nb = fb / np.sqrt((fb * fb).sum(axis=2, keepdims=True) + 1e-10)
        total += w * float(((na - nb) ** 2).sum(axis=2).mean())
    return total


def clip_s(bundle: BackendBundle, src: np.ndarray, edited: np.ndarray, prompt: str) -> float:
    """Cosine similarity between the edit-minus-source image-embedding shift
    and the instruction embedding. A zero shift (edit identical to source in
    embedding space) returns the defined fallback 0.0."""
    if not prompt:
        raise ArgumentError("prompt must be nonempty")
    e_src = bundle.clip.embed_image(src)
    e_edit = bundle.clip.embed_image(edited)
    shift = e_edit - e_src
    if float(np.linalg.norm(shift)) == 0.0:
        return 0.0
    return cosine_sim(shift, bundle.clip.embed_text(prompt))


def clip_s_is_degenerate(bundle: BackendBundle, src: np.ndarray, edited: np.ndarray) -> bool:
    shift = bundle.clip.embed_image(edited) - bundle.clip.embed_image(src)
    return float(np.linalg.norm(shift)) == 0.0


def clip_sd(bundle: BackendBundle, edited: np.ndarray, description: str) -> float:
    """Cosine similarity between the edited image embedding and the embedding
    of a descriptive caption of the expected outcome."""
    if not description:
        raise ArgumentError("description must be nonempty")
    return cosine_sim(bundle.clip.embed_image(edited), bundle.clip.embed_text(description))


def clip_i(bundle: BackendBundle, src: np.ndarray, edited: np.ndarray) -> float:
    """Cosine similarity between edited and source image embeddings; a coarse
    indicator of how much of the original content survived."""
    return cosine_sim(bundle.clip.embed_image(edited), bundle.clip.embed_image(src))


def fr_score(bundle: BackendBundle, src: np.ndarray, edited: np.ndarray) -> float:
    """Facial-recognition similarity between the edited and source subjects;
    1.0 means the identity signature fully survived."""
    return float(bundle.face.similarity(edited, src))


def compute_metric_set(
    bundle: BackendBundle,
    src: np.ndarray,
    edited: np.ndarray,
    reference_edit: np.ndarray | None = None,
    prompt: str | None = None,
    description: str | None = None,
) -> tuple[dict, list]:
    """All seven metrics for one evaluation row, with fallback flags.

    ``reference_edit`` is the same-seed edit of the unprotected image; without
    it the pixel/perceptual comparisons (psnr, ssim, lpips) are null, which is
    exactly the no-defense baseline row.
    """
    values: dict[str, float | None] = {name: None for name in METRIC_ORDER}
    flags: list[str] = []
    if reference_edit is not None:
        values["psnr"] = psnr(reference_edit, edited)
        if values["psnr"] == PSNR_CAP_DB:
            flags.append("psnr_capped")
        values["ssim"] = ssim(reference_edit, edited)
        values["lpips"] = lpips(bundle, reference_edit, edited)
    # the image embeddings feed three metrics; compute them once
    e_src = bundle.clip.embed_image(src)
    e_edit = bundle.clip.embed_image(edited)
    if prompt:
        shift = e_edit - e_src
        if float(np.linalg.norm(shift)) == 0.0:
            values["clip_s"] = 0.0
            flags.append("clip_s_zero_shift")
        else:
            values["clip_s"] = cosine_sim(shift, bundle.clip.embed_text(prompt))
    if description:
        values["clip_sd"] = cosine_sim(e_edit, bundle.clip.embed_text(description))
    else:
        flags.append("clip_sd_missing_description")
    values["clip_i"] = cosine_sim(e_edit, e_src)
    values["fr"] = fr_score(bundle, src, edited)
    return values, flags


def aggregate(
    rows: Iterable[Mapping], group_by: Sequence[str] = ("method",)
) -> "OrderedDict[tuple, dict]":
    """Group evaluation rows and reduce each metric to (mean, population std).

    Rows are mappings carrying the group fields at top level, a ``metrics``
    mapping of name -> value-or-None, and a ``record_id``. Null metric values
    are skipped; each cell remembers the record ids it aggregated so report
    cells stay traceable.
    """
    groups: "OrderedDict[tuple, list]" = OrderedDict()
    for row in rows:
        key = tuple(row[k] for k in group_by)
        groups.setdefault(key, []).append(row)
    out: "OrderedDict[tuple, dict]" = OrderedDict()
    for key, members in groups.items():
        cells = {}
        for name in METRIC_ORDER:
            vals = []
            ids = []
            for row in members:
                v = row["metrics"].get(name)
                if v is not None:
                    vals.append(float(v))
                    ids.append(row["record_id"])
            if vals:
                arr = np.asarray(vals, dtype=np.float64)
                cells[name] = {
                    "mean": float(arr.mean()),
                    "std": float(arr.std()),
                    "n": len(vals),
                    "record_ids": ids,
                }
            else:
                cells[name] = {"mean": None, "std": None, "n": 0, "record_ids": []}
        out[key] = cells
    return out
