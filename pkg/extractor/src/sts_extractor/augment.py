"""Seeded image augmentation: random resized crops and horizontal flips.

These are the only two transforms the extractor applies. The crop follows
the usual convention: pick a target area fraction and aspect ratio, retry a
bounded number of times if the box does not fit, then fall back to the
largest centered box with an in-range aspect ratio. All randomness comes
from the numpy Generator passed in, so a view sequence is reproducible from
its seed alone.
"""
from __future__ import annotations

import math

import numpy as np
from PIL import Image

DEFAULT_SCALE_RANGE = (0.08, 1.0)
DEFAULT_RATIO_RANGE = (3.0 / 4.0, 4.0 / 3.0)
FLIP_PROBABILITY = 0.5
_RESAMPLE = Image.Resampling.BICUBIC


def base_view(img: Image.Image, size: int) -> Image.Image:
    """Deterministic preprocessing: shorter side to ``size``, center crop."""
    w, h = img.size
    scale = size / min(w, h)
    rw, rh = max(size, round(w * scale)), max(size, round(h * scale))
    img = img.resize((rw, rh), _RESAMPLE)
    left = (rw - size) // 2
    top = (rh - size) // 2
    return img.crop((left, top, left + size, top + size))


def _crop_box(rng: np.random.Generator, width: int, height: int,
              scale_range, ratio_range):
    area = width * height
    log_lo, log_hi = math.log(ratio_range[0]), math.log(ratio_range[1])
    for _ in range(10):
        target = area * rng.uniform(scale_range[0], scale_range[1])
        ratio = math.exp(rng.uniform(log_lo, log_hi))
        w = round(math.sqrt(target * ratio))
        h = round(math.sqrt(target / ratio))
        if 0 < w <= width and 0 < h <= height:
            top = int(rng.integers(0, height - h + 1))
            left = int(rng.integers(0, width - w + 1))
            return left, top, w, h
    # fallback: clamp the aspect ratio and center the box
    in_ratio = width / height
    if in_ratio < ratio_range[0]:
        w, h = width, round(width / ratio_range[0])
    elif in_ratio > ratio_range[1]:
        w, h = round(height * ratio_range[1]), height
    else:
        w, h = width, height
    return (width - w) // 2, (height - h) // 2, w, h


def random_view(img: Image.Image, size: int, rng: np.random.Generator,
                scale_range=DEFAULT_SCALE_RANGE,
                ratio_range=DEFAULT_RATIO_RANGE) -> Image.Image:
    """One random resized crop, horizontally flipped with probability 1/2."""
    left, top, w, h = _crop_box(rng, img.size[0], img.size[1],
                                scale_range, ratio_range)
    view = img.crop((left, top, left + w, top + h)).resize((size, size),
                                                           _RESAMPLE)
    if rng.uniform() < FLIP_PROBABILITY:
        view = view.transpose(Image.Transpose.FLIP_LEFT_RIGHT)
    return view


def sample_views(img: Image.Image, size: int, n: int,
                 rng: np.random.Generator,
                 scale_range=DEFAULT_SCALE_RANGE,
                 ratio_range=DEFAULT_RATIO_RANGE) -> list:
    """The unaugmented view followed by ``n - 1`` random views."""
    if n < 1:
        raise ValueError(f"need at least one view, got {n}")
    views = [base_view(img, size)]
    for _ in range(n - 1):
        views.append(random_view(img, size, rng, scale_range, ratio_range))
    return views
