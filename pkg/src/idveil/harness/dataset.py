"""Dataset ingestion: a directory of PNG/JPEG portraits becomes a
deterministic, size-normalized list of (image id, tensor) pairs."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image

from idveil.core import ArgumentError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def load_dataset(path: str | Path, image_size: int) -> list:
    """Read every image in a directory, sorted by filename, resized to
    (image_size, image_size) with bilinear resampling into [0, 1] tensors.
    Unreadable files are skipped with a logged warning; an empty or
    image-free directory is an error."""
    root = Path(path)
    if not root.is_dir():
        raise ArgumentError(f"dataset path is not a directory: {root}")
    files = sorted(
        (p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.name,
    )
    if not files:
        raise ArgumentError(f"no PNG/JPEG images in {root}")
    out = []
    seen_ids = set()
    for f in files:
        try:
            with Image.open(f) as im:
                rgb = im.convert("RGB").resize((image_size, image_size), Image.BILINEAR)
            arr = np.asarray(rgb, dtype=np.float64) / 255.0
        except Exception as exc:
            log.warning("skipping unreadable image %s (%s)", f.name, exc)
            continue
        image_id = f.stem if f.stem not in seen_ids else f.name
        seen_ids.add(image_id)
        out.append((image_id, arr))
    if not out:
        raise ArgumentError(f"no readable images in {root}")
    return out
