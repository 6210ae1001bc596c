"""Writers for the STSE bundle format and the dataset manifest.

This package produces files for the adaptation engine but does not import
it; the byte layout below is the published interface between the two.

    offset 0   4 bytes   magic "STSE"
    offset 4   u32       version, currently 1
    offset 8   u32       rows
    offset 12  u32       cols
    offset 16  u8        dtype code, 0 = float32
    offset 17  payload   rows*cols float32 values, row-major

All integers are little-endian. Every file is written to a temporary name
in the destination directory and renamed into place, so a consumer scanning
the directory never sees a half-written bundle.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"STSE"
VERSION = 1
DTYPE_F32 = 0
HEADER_STRUCT = struct.Struct("<4sIIIB")
SCHEMA_VERSION = 1


class ExtractError(Exception):
    """Job-level failure; the process exits with code 2."""


def atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_bundle(matrix: np.ndarray, path: Path) -> None:
    """Store a 2-D float array as a single-precision STSE bundle."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ExtractError(f"bundle must be a non-empty 2-D array, got {m.shape}")
    if not np.isfinite(m).all():
        raise ExtractError("bundle contains non-finite values")
    payload = m.astype("<f4")
    header = HEADER_STRUCT.pack(MAGIC, VERSION, m.shape[0], m.shape[1], DTYPE_F32)
    atomic_write(Path(path), header + payload.tobytes())


def write_manifest(path: Path, *, class_names, templates, logit_scale,
                   prototype_paths, samples, augmentation, extractor) -> None:
    """Write the dataset manifest JSON understood by the adaptation engine.

    ``prototype_paths`` holds one bundle path per template, in template
    order. ``samples`` is a list of dicts with keys sample_id, path and
    label. Paths are stored relative to the manifest's directory.
    """
    path = Path(path)
    root = path.parent

    def rel(p) -> str:
        return os.path.relpath(Path(p), root)

    doc = {
        "schema_version": SCHEMA_VERSION,
        "class_names": list(class_names),
        "templates": list(templates),
        "logit_scale": float(logit_scale),
        "prototype_bundles": [rel(p) for p in prototype_paths],
        "samples": [
            {"sample_id": s["sample_id"], "path": rel(s["path"]),
             "label": int(s["label"])}
            for s in samples
        ],
        "augmentation": augmentation,
        "extractor": extractor,
    }
    atomic_write(path, (json.dumps(doc, indent=2) + "\n").encode())
