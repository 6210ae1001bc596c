"""Extraction jobs: images + checkpoint in, bundles + manifest out.

A job walks an image root laid out as one subdirectory per class, encodes
text prototypes for every prompt template and an N-view batch for every
image, and writes the results in the adaptation engine's on-disk formats.
View randomness is seeded per sample from the job seed and a hash of the
sample id, so adding or removing files never changes other samples' views.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .augment import DEFAULT_RATIO_RANGE, DEFAULT_SCALE_RANGE, sample_views
from .bundles import ExtractError, write_bundle, write_manifest

logger = logging.getLogger(__name__)

SINGLE_TEMPLATE = "a photo of a {CLASS}."
GENERIC_TEMPLATES = (
    "a bad photo of the {CLASS}.",
    "a {CLASS} in a video game.",
    "a origami {CLASS}.",
    "a photo of the small {CLASS}.",
    "art of the {CLASS}.",
    "a photo of the large {CLASS}.",
    "itap of a {CLASS}.",
)
DEFAULT_TEMPLATES = (SINGLE_TEMPLATE,) + GENERIC_TEMPLATES

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".webp"}
NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class ExtractJob:
    dataset_name: str
    image_root: Path
    class_names: tuple
    out_dir: Path
    templates: tuple = DEFAULT_TEMPLATES
    views_per_sample: int = 64
    seed: int = 0
    scale_range: tuple = DEFAULT_SCALE_RANGE

    def __post_init__(self):
        object.__setattr__(self, "image_root", Path(self.image_root))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "templates", tuple(self.templates))
        if self.views_per_sample < 1:
            raise ExtractError(
                f"views_per_sample must be >= 1, got {self.views_per_sample}")
        if not self.class_names:
            raise ExtractError("class_names is empty")
        if len(set(self.class_names)) != len(self.class_names):
            raise ExtractError("class_names contains duplicates")
        if not self.templates:
            raise ExtractError("templates is empty")
        for t in self.templates:
            if "{CLASS}" not in t:
                raise ExtractError(f"template without {{CLASS}} slot: {t!r}")
        lo, hi = self.scale_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ExtractError(f"bad crop scale range {self.scale_range}")


def _prompt(template: str, class_name: str) -> str:
    return template.replace("{CLASS}", class_name.replace("_", " "))


def _normalize_rows(m: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1)
    if not np.isfinite(m).all() or norms.min() < NORM_FLOOR:
        raise ExtractError(f"degenerate embedding in {what}")
    return m / norms[:, None]


def _sample_rng(seed: int, sample_id: str) -> np.random.Generator:
    digest = hashlib.sha256(sample_id.encode()).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in (0, 4)]
    return np.random.default_rng([seed] + words)


def _discover(job: ExtractJob) -> list:
    """Pair every class with its image files; directory set must match."""
    if not job.image_root.is_dir():
        raise ExtractError(f"image root {job.image_root} is not a directory")
    dirs = sorted(p.name for p in job.image_root.iterdir() if p.is_dir())
    if dirs != sorted(job.class_names):
        raise ExtractError(
            f"class mismatch: {len(job.class_names)} classes in job, "
            f"{len(dirs)} directories under {job.image_root} "
            f"(job only: {sorted(set(job.class_names) - set(dirs))}, "
            f"disk only: {sorted(set(dirs) - set(job.class_names))})")
    found = []
    for label, name in enumerate(job.class_names):
        for p in sorted((job.image_root / name).iterdir()):
            if p.suffix.lower() in IMAGE_SUFFIXES:
                found.append((f"{name}/{p.name}", p, label))
    return found


def extract(job: ExtractJob, encoder) -> Path:
    """Run the job; returns the path of the written manifest."""
    out = job.out_dir
    views_dir = out / "views"
    views_dir.mkdir(parents=True, exist_ok=True)

    proto_paths = []
    for i, template in enumerate(job.templates):
        texts = [_prompt(template, name) for name in job.class_names]
        z = _normalize_rows(np.asarray(encoder.encode_texts(texts),
                                       dtype=np.float64),
                            f"template {template!r}")
        path = out / f"prototypes_t{i:02d}.stse"
        write_bundle(z, path)
        proto_paths.append(path)

    samples = []
    skipped = []
    for sample_id, path, label in _discover(job):
        try:
            with Image.open(path) as raw:
                img = raw.convert("RGB")
        except OSError as exc:
            logger.warning("skipping unreadable image %s: %s", sample_id, exc)
            skipped.append(sample_id)
            continue
        rng = _sample_rng(job.seed, sample_id)
        views = sample_views(img, encoder.input_size, job.views_per_sample,
                             rng, job.scale_range, DEFAULT_RATIO_RANGE)
        emb = np.asarray(encoder.encode_images(views), dtype=np.float64)
        try:
            emb = _normalize_rows(emb, f"sample {sample_id!r}")
        except ExtractError as exc:
            logger.warning("skipping %s: %s", sample_id, exc)
            skipped.append(sample_id)
            continue
        bundle = views_dir / (sample_id.replace("/", "__") + ".stse")
        write_bundle(emb, bundle)
        samples.append({"sample_id": sample_id, "path": bundle,
                        "label": label})

    if not samples:
        raise ExtractError(f"no readable images under {job.image_root}")

    lo, hi = job.scale_range
    manifest = out / "manifest.json"
    write_manifest(
        manifest,
        class_names=job.class_names,
        templates=job.templates,
        logit_scale=encoder.logit_scale,
        prototype_paths=proto_paths,
        samples=samples,
        augmentation=(
            f"row 0 unaugmented (shorter side to {encoder.input_size}, "
            f"center crop); rows 1..{job.views_per_sample - 1} random "
            f"resized crop (scale {lo}-{hi}, ratio 3/4-4/3) + horizontal "
            f"flip p=0.5; seeded per sample from seed {job.seed}"),
        extractor={
            "dataset_name": job.dataset_name,
            "model_name": encoder.model_name,
            "checkpoint_hash": encoder.checkpoint_hash,
            "seed": job.seed,
            "views_per_sample": job.views_per_sample,
            "crop_scale_range": [lo, hi],
            "skipped": skipped,
        })
    return manifest
