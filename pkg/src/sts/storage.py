"""Embedding-bundle file format, dataset manifest, and results streams.

Bundle layout, fixed little-endian:

    offset 0   4 bytes   magic "STSE"
    offset 4   u32       version, currently 1
    offset 8   u32       rows
    offset 12  u32       cols
    offset 16  u8        dtype code, 0 = float32
    offset 17  payload   rows*cols float32 values, row-major

Values are stored in single precision and widened to float64 on read;
computation never runs in float32. The manifest is a JSON document whose
paths are resolved relative to the manifest file's directory.
"""
from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CorruptPayloadError,
    FormatError,
    InvalidDataError,
    StorageError,
    ValidationError,
)
from .objective import ViewBatch
from .prototypes import PrototypeSet, build_prototypes

MAGIC = b"STSE"
VERSION = 1
DTYPE_F32 = 0
HEADER_STRUCT = struct.Struct("<4sIIIB")
HEADER_SIZE = HEADER_STRUCT.size
SCHEMA_VERSION = 1


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def write_bundle(matrix: np.ndarray, path) -> None:
    """Write one matrix as an STSE bundle (float32 payload, atomic rename)."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValidationError(f"bundle needs a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("bundle matrix contains non-finite values")
    with np.errstate(over="ignore"):
        payload = m.astype("<f4")
    if not np.all(np.isfinite(payload)):
        raise ValidationError("matrix values overflow float32 storage precision")
    header = HEADER_STRUCT.pack(MAGIC, VERSION, m.shape[0], m.shape[1], DTYPE_F32)
    _atomic_write(Path(path), header + payload.tobytes())


def read_bundle(path) -> np.ndarray:
    """Read an STSE bundle, validating strictly; returns float64."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    if len(raw) < HEADER_SIZE:
        raise CorruptPayloadError(
            f"{path}: file is {len(raw)} bytes, shorter than the {HEADER_SIZE}-byte header")
    magic, version, rows, cols, dtype = HEADER_STRUCT.unpack(raw[:HEADER_SIZE])
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    if rows < 1:
        raise FormatError(f"{path}: rows must be >= 1, got {rows}", offset=8)
    if cols < 1:
        raise FormatError(f"{path}: cols must be >= 1, got {cols}", offset=12)
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unknown dtype code {dtype}", offset=16)
    expected = rows * cols * 4
    actual = len(raw) - HEADER_SIZE
    if actual != expected:
        raise CorruptPayloadError(
            f"{path}: payload is {actual} bytes, header promises {expected}")
    values = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE)
    m = values.reshape(rows, cols).astype(np.float64)
    if not np.all(np.isfinite(m)):
        raise InvalidDataError(f"{path}: payload contains non-finite values")
    return m


@dataclass(frozen=True)
class SampleEntry:
    sample_id: str
    path: Path
    label: int | None
    original_index: int = 0


@dataclass(frozen=True)
class DatasetManifest:
    schema_version: int
    class_names: tuple[str, ...]
    templates: tuple[str, ...]
    logit_scale: float
    prototype_paths: tuple[Path, ...]
    samples: tuple[SampleEntry, ...]
    augmentation: str
    extractor: dict | None
    root: Path

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def _require(doc: dict, key: str):
    if key not in doc:
        raise ValidationError(f"manifest is missing required field {key!r}")
    return doc[key]


def load_manifest(path) -> DatasetManifest:
    """Load and validate a dataset manifest JSON document."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise StorageError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValidationError(f"manifest {path} must be a JSON object")
    root = path.parent

    schema_version = _require(doc, "schema_version")
    if schema_version != SCHEMA_VERSION:
        raise ValidationError(
            f"unsupported manifest schema_version {schema_version!r}")
    class_names = tuple(str(n) for n in _require(doc, "class_names"))
    if not class_names:
        raise ValidationError("manifest class_names must be non-empty")
    if len(set(class_names)) != len(class_names):
        raise ValidationError("manifest class_names must be unique")
    templates = tuple(str(t) for t in _require(doc, "templates"))
    if not templates:
        raise ValidationError("manifest templates must be non-empty")
    logit_scale = _require(doc, "logit_scale")
    if not (isinstance(logit_scale, (int, float)) and math.isfinite(logit_scale)
            and logit_scale > 0):
        raise ValidationError(f"manifest logit_scale must be positive, got {logit_scale!r}")

    proto_rel = _require(doc, "prototype_bundles")
    if len(proto_rel) != len(templates):
        raise ValidationError(
            f"{len(proto_rel)} prototype bundles for {len(templates)} templates")
    proto_paths = []
    cols_seen = None
    for rel in proto_rel:
        p = (root / rel).resolve()
        if not p.is_file():
            raise ValidationError(f"prototype bundle path does not resolve: {rel}")
        m = read_bundle(p)
        if m.shape[0] != len(class_names):
            raise ValidationError(
                f"prototype bundle {rel} has {m.shape[0]} rows for "
                f"{len(class_names)} class names")
        if cols_seen is None:
            cols_seen = m.shape[1]
        elif m.shape[1] != cols_seen:
            raise ValidationError(
                f"prototype bundle {rel} has {m.shape[1]} cols, expected {cols_seen}")
        proto_paths.append(p)

    samples = []
    seen_ids = set()
    c = len(class_names)
    for raw in _require(doc, "samples"):
        sid = str(_require(raw, "sample_id"))
        if sid in seen_ids:
            raise ValidationError(f"duplicate sample_id {sid!r} in manifest")
        seen_ids.add(sid)
        rel = _require(raw, "path")
        p = (root / rel).resolve()
        if not p.is_file():
            raise ValidationError(f"sample {sid!r} path does not resolve: {rel}")
        label = raw.get("label")
        if label is not None:
            if not isinstance(label, int) or not (0 <= label < c):
                raise ValidationError(
                    f"sample {sid!r} label {label!r} outside [0, {c})")
        original_index = raw.get("original_index", 0)
        if not isinstance(original_index, int) or original_index < 0:
            raise ValidationError(
                f"sample {sid!r} original_index must be a non-negative integer")
        samples.append(SampleEntry(sample_id=sid, path=p, label=label,
                                   original_index=original_index))

    augmentation = str(_require(doc, "augmentation"))
    extractor = doc.get("extractor")
    if extractor is not None and not isinstance(extractor, dict):
        raise ValidationError("manifest extractor block must be an object")

    return DatasetManifest(
        schema_version=int(schema_version), class_names=class_names,
        templates=templates, logit_scale=float(logit_scale),
        prototype_paths=tuple(proto_paths), samples=tuple(samples),
        augmentation=augmentation, extractor=extractor, root=root)


def save_manifest(man: DatasetManifest, path) -> None:
    """Write a manifest JSON with paths relative to its own directory."""
    path = Path(path)
    root = path.parent

    def rel(p: Path) -> str:
        return os.path.relpath(p, root)

    doc = {
        "schema_version": man.schema_version,
        "class_names": list(man.class_names),
        "templates": list(man.templates),
        "logit_scale": man.logit_scale,
        "prototype_bundles": [rel(p) for p in man.prototype_paths],
        "samples": [
            {"sample_id": s.sample_id, "path": rel(s.path),
             **({"label": s.label} if s.label is not None else {}),
             **({"original_index": s.original_index} if s.original_index else {})}
            for s in man.samples
        ],
        "augmentation": man.augmentation,
    }
    if man.extractor is not None:
        doc["extractor"] = man.extractor
    _atomic_write(path, (json.dumps(doc, indent=2) + "\n").encode())


def load_prototypes(man: DatasetManifest) -> PrototypeSet:
    """Read every template's prototype bundle and ensemble them."""
    mats = [read_bundle(p) for p in man.prototype_paths]
    return build_prototypes(mats, man.class_names, logit_scale=man.logit_scale)


def load_views(man: DatasetManifest, entry: SampleEntry) -> ViewBatch:
    m = read_bundle(entry.path)
    return ViewBatch(sample_id=entry.sample_id, v=m,
                     original_index=entry.original_index)


def write_results(results, path) -> None:
    """Emit one JSON object per episode, in the given order."""
    lines = [json.dumps(r.to_json_dict(), sort_keys=True) for r in results]
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode())


def read_results(path) -> list[dict]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise StorageError(f"cannot read results {path}: {exc}") from exc
    out = []
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise InvalidDataError(f"{path}: line {i + 1} is not valid JSON: {exc}") from exc
    return out


def summarize_results(results, labels, config_echo: dict) -> dict:
    """Accuracy, mean entropy delta, mean adapt time, and a config echo."""
    results = list(results)
    if not results:
        raise ValidationError("cannot summarize zero results")
    missing = [r.sample_id for r in results if r.sample_id not in labels]
    if missing:
        raise ValidationError(f"unlabeled samples: {', '.join(missing)}")
    correct = sum(1 for r in results if r.predicted_index == labels[r.sample_id])
    return {
        "num_samples": len(results),
        "accuracy": correct / len(results),
        "mean_entropy_delta": float(np.mean(
            [r.entropy_before - r.entropy_after for r in results])),
        "mean_adapt_time": float(np.mean([r.wall_time_adapt for r in results])),
        "config": config_echo,
    }


def write_summary(summary: dict, path) -> None:
    _atomic_write(Path(path), (json.dumps(summary, indent=2, sort_keys=True) + "\n").encode())
