"""Turning coefficients into a prototype shift and adapted prototypes.

The adapted prototype for class c is normalize(z_c + delta), where delta =
B @ gamma lives in the steering subspace. In shared mode one delta moves
every class; in per_class mode each class has its own coefficient row.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AnnihilatedPrototypeError, ValidationError
from .prototypes import PrototypeSet
from .spectral import SteeringBasis

MODES = ("shared", "per_class")


@dataclass(frozen=True)
class SteeringCoefficients:
    mode: str
    values: np.ndarray   # (k_t,) shared, (C, k_t) per_class

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        v = np.asarray(self.values, dtype=np.float64)
        want = 1 if self.mode == "shared" else 2
        if v.ndim != want:
            raise ValidationError(
                f"{self.mode} coefficients must be {want}-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("coefficients contain non-finite entries")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, mode: str, k_t: int, num_classes: int | None = None):
        if mode == "shared":
            return cls(mode=mode, values=np.zeros(k_t))
        return cls(mode=mode, values=np.zeros((num_classes, k_t)))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)


@dataclass(frozen=True)
class SteeringState:
    coefficients: SteeringCoefficients
    shift: np.ndarray        # 1 x D (shared) or C x D (per_class)
    shift_norm: float = field(default=0.0)

    @classmethod
    def from_coefficients(cls, basis: SteeringBasis, coeffs: SteeringCoefficients):
        if coeffs.mode == "shared":
            shift = (basis.b @ coeffs.values)[None, :]
        else:
            shift = coeffs.values @ basis.b.T
        return cls(coefficients=coeffs, shift=shift,
                   shift_norm=float(np.linalg.norm(shift)))


def _check_shapes(proto: PrototypeSet, basis: SteeringBasis, coeffs: SteeringCoefficients):
    d, k = basis.b.shape
    if d != proto.dim:
        raise ValidationError(f"basis dim {d} != prototype dim {proto.dim}")
    if coeffs.mode == "shared":
        if coeffs.values.shape != (k,):
            raise ValidationError(
                f"shared coefficients shape {coeffs.values.shape} != ({k},)")
    else:
        if coeffs.values.shape != (proto.num_classes, k):
            raise ValidationError(
                f"per_class coefficients shape {coeffs.values.shape} "
                f"!= ({proto.num_classes}, {k})")


def shifted_geometry(proto: PrototypeSet, basis: SteeringBasis,
                     coeffs: SteeringCoefficients):
    """Internal: (delta, w, norms, adapted) for the loss and its gradient.

    delta is 1 x D or C x D, w = z + delta (pre-normalization), norms its
    row norms, adapted = w / norms. Raises if any row is annihilated.
    """
    _check_shapes(proto, basis, coeffs)
    if coeffs.mode == "shared":
        delta = (basis.b @ coeffs.values)[None, :]
    else:
        delta = coeffs.values @ basis.b.T
    w = proto.z + delta
    norms = np.linalg.norm(w, axis=1)
    tiny = np.nonzero(norms < 1e-8)[0]
    if tiny.size:
        raise AnnihilatedPrototypeError(tiny[0], norms[tiny[0]])
    return delta, w, norms, w / norms[:, None]


def apply_shift(proto: PrototypeSet, basis: SteeringBasis,
                coeffs: SteeringCoefficients) -> np.ndarray:
    """Adapted prototype matrix, rows renormalized to unit length.

    An exactly-zero coefficient vector returns the prototypes unchanged, so
    evaluation-mode episodes reduce to the zero-shot path bit-for-bit.
    """
    _check_shapes(proto, basis, coeffs)
    if coeffs.is_zero:
        return proto.z.copy()
    return shifted_geometry(proto, basis, coeffs)[3]
