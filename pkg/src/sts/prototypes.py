"""Class prototypes: unit-norm text embeddings and zero-shot scoring.

A prototype is one unit vector per class. Scores are cosine similarities
scaled by the encoder's learned logit scale, turned into probabilities by
a softmax.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEmbeddingError, NumericalError, ValidationError
from .numerics import softmax


@dataclass(frozen=True)
class PrototypeSet:
    class_names: tuple[str, ...]
    z: np.ndarray           # C x D, unit rows
    template_count: int
    logit_scale: float

    @property
    def num_classes(self) -> int:
        return self.z.shape[0]

    @property
    def dim(self) -> int:
        return self.z.shape[1]


def _validate_names(class_names, c):
    names = tuple(str(n) for n in class_names)
    if len(names) != c:
        raise ValidationError(f"{len(names)} class names for {c} rows")
    if any(not n for n in names):
        raise ValidationError("class names must be non-empty")
    if len(set(names)) != len(names):
        raise ValidationError("class names must be unique")
    return names


def build_prototypes(per_template_embeddings, class_names, logit_scale=100.0) -> PrototypeSet:
    """Normalize each template's rows, average per class, renormalize.

    With one template this is plain row normalization.
    """
    mats = [np.asarray(m, dtype=np.float64) for m in per_template_embeddings]
    if not mats:
        raise ValidationError("need at least one template embedding matrix")
    shape = mats[0].shape
    if len(shape) != 2:
        raise ValidationError("template embeddings must be 2-D matrices")
    if any(m.shape != shape for m in mats):
        raise ValidationError("template embedding matrices differ in shape")
    if not (math.isfinite(logit_scale) and logit_scale > 0):
        raise ValidationError(f"logit_scale must be positive and finite, got {logit_scale}")
    c, _ = shape
    names = _validate_names(class_names, c)
    normed = []
    for t, m in enumerate(mats):
        if not np.all(np.isfinite(m)):
            raise ValidationError(f"template {t} contains non-finite entries")
        norms = np.linalg.norm(m, axis=1)
        bad = np.nonzero(norms < 1e-12)[0]
        if bad.size:
            raise DegenerateEmbeddingError(
                f"zero-norm embedding for class {bad[0]} ({names[bad[0]]!r}) "
                f"in template {t}")
        normed.append(m / norms[:, None])
    mean = np.mean(normed, axis=0)
    norms = np.linalg.norm(mean, axis=1)
    bad = np.nonzero(norms < 1e-12)[0]
    if bad.size:
        raise DegenerateEmbeddingError(
            f"templates cancel for class {bad[0]} ({names[bad[0]]!r})")
    z = mean / norms[:, None]
    return PrototypeSet(class_names=names, z=z,
                        template_count=len(mats), logit_scale=float(logit_scale))


def zero_shot_probs(proto: PrototypeSet, v: np.ndarray) -> np.ndarray:
    """Class probabilities of one unit-norm embedding under the prototypes."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (proto.dim,):
        raise ValidationError(f"view has shape {v.shape}, expected ({proto.dim},)")
    if abs(np.linalg.norm(v) - 1.0) > 1e-4:
        raise ValidationError("view embedding must be unit-norm within 1e-4")
    logits = proto.logit_scale * (proto.z @ v)
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite zero-shot logits")
    return softmax(logits)
