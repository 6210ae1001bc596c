"""Embedding extraction for the sts adaptation engine.

Turns an image directory and a CLIP checkpoint into the engine's on-disk
dataset: one STSE prototype bundle per prompt template, one N-view STSE
bundle per image, and a manifest JSON tying them together.
"""
from .augment import (
    DEFAULT_RATIO_RANGE,
    DEFAULT_SCALE_RANGE,
    FLIP_PROBABILITY,
    base_view,
    random_view,
    sample_views,
)
from .bundles import ExtractError, write_bundle, write_manifest
from .encoders import ClipEncoder, StubEncoder
from .job import (
    DEFAULT_TEMPLATES,
    GENERIC_TEMPLATES,
    SINGLE_TEMPLATE,
    ExtractJob,
    extract,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_RATIO_RANGE",
    "DEFAULT_SCALE_RANGE",
    "DEFAULT_TEMPLATES",
    "FLIP_PROBABILITY",
    "GENERIC_TEMPLATES",
    "SINGLE_TEMPLATE",
    "ClipEncoder",
    "ExtractError",
    "ExtractJob",
    "StubEncoder",
    "base_view",
    "extract",
    "random_view",
    "sample_views",
    "write_bundle",
    "write_manifest",
]
