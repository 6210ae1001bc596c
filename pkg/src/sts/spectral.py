"""Thin SVD of the prototype matrix and selection of the steering basis.

The steering basis is the span of the top right-singular vectors of the
class-prototype matrix: the principal directions along which the classes
actually differ. Rank is chosen either by the Gavish-Donoho hard threshold
(noise-floor estimate from the median singular value) or by a cumulative
energy fraction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSpectrumError, NumericalError, ValidationError


@dataclass(frozen=True)
class SvdFactors:
    u: np.ndarray   # C x k', orthonormal columns
    s: np.ndarray   # k' non-increasing singular values
    vt: np.ndarray  # k' x D, orthonormal rows


@dataclass(frozen=True)
class RankSelection:
    method: str            # gavish_donoho | energy | fixed
    k_t: int
    threshold: float | None
    energy_captured: float


@dataclass(frozen=True)
class SteeringBasis:
    b: np.ndarray          # D x k_t, orthonormal columns
    selection: RankSelection

    @property
    def k_t(self) -> int:
        return self.b.shape[1]


def thin_svd(m: np.ndarray) -> SvdFactors:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 2:
        raise ValidationError(f"need a matrix with both sides >= 2, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("matrix contains non-finite entries")
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed to converge: {exc}") from exc
    # Fix the sign ambiguity: per right singular vector, force the
    # largest-magnitude entry positive so repeated runs are byte-identical.
    for i in range(vt.shape[0]):
        j = int(np.argmax(np.abs(vt[i])))
        if vt[i, j] < 0:
            vt[i] = -vt[i]
            u[:, i] = -u[:, i]
    return SvdFactors(u=u, s=s, vt=vt)


def _check_spectrum(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValidationError("singular values must be a non-empty 1-D array")
    if np.any(s < 0) or np.any(np.diff(s) > 1e-9 * max(1.0, float(s[0]))):
        raise ValidationError("singular values must be non-negative and non-increasing")
    return s


def _energy_captured(s: np.ndarray, k: int) -> float:
    total = float(np.sum(s * s))
    return float(np.sum(s[:k] * s[:k]) / total) if total > 0 else 0.0


def gavish_donoho_rank(s: np.ndarray, c: int, d: int) -> RankSelection:
    s = _check_spectrum(s)
    if not np.any(s > 0):
        raise DegenerateSpectrumError("all singular values are zero")
    beta = min(c, d) / max(c, d)
    omega = 0.56 * beta**3 - 0.95 * beta**2 + 1.82 * beta + 1.43
    tau = omega * float(np.median(s))
    k = max(1, int(np.sum(s > tau)))
    return RankSelection(method="gavish_donoho", k_t=k, threshold=tau,
                         energy_captured=_energy_captured(s, k))


def energy_rank(s: np.ndarray, fraction: float) -> RankSelection:
    if not (0.0 < fraction <= 1.0):
        raise ValidationError(f"energy fraction must be in (0, 1], got {fraction}")
    s = _check_spectrum(s)
    total = float(np.sum(s * s))
    if total <= 0:
        raise DegenerateSpectrumError("all singular values are zero")
    cum = np.cumsum(s * s) / total
    k = int(np.searchsorted(cum, fraction - 1e-15) + 1)
    k = min(k, s.size)
    return RankSelection(method="energy", k_t=k, threshold=fraction,
                         energy_captured=_energy_captured(s, k))


def fixed_rank(s: np.ndarray, k: int) -> RankSelection:
    s = _check_spectrum(s)
    if not (1 <= k <= s.size):
        raise ValidationError(f"fixed rank {k} outside [1, {s.size}]")
    return RankSelection(method="fixed", k_t=int(k), threshold=None,
                         energy_captured=_energy_captured(s, int(k)))


RANK_METHODS = ("gd", "energy", "fixed")


@dataclass(frozen=True)
class RankPolicy:
    """Which rank-selection rule to run, with its parameters."""

    method: str = "gd"
    energy_fraction: float = 0.98
    fixed_k: int | None = None

    def __post_init__(self):
        if self.method not in RANK_METHODS:
            raise ValidationError(f"rank method must be one of {RANK_METHODS}, "
                                  f"got {self.method!r}")
        if self.method == "energy" and not (0.0 < self.energy_fraction <= 1.0):
            raise ValidationError(
                f"energy fraction must be in (0, 1], got {self.energy_fraction}")
        if self.method == "fixed" and (self.fixed_k is None or self.fixed_k < 1):
            raise ValidationError("fixed rank selection needs fixed_k >= 1")

    def select(self, s: np.ndarray, c: int, d: int) -> RankSelection:
        if self.method == "gd":
            return gavish_donoho_rank(s, c, d)
        if self.method == "energy":
            return energy_rank(s, self.energy_fraction)
        return fixed_rank(s, self.fixed_k)


def steering_basis_for(z: np.ndarray, policy: RankPolicy) -> SteeringBasis:
    """Thin SVD of the prototype matrix, then basis extraction per policy."""
    f = thin_svd(z)
    sel = policy.select(f.s, z.shape[0], z.shape[1])
    return extract_basis(f, sel)


def extract_basis(f: SvdFactors, sel: RankSelection) -> SteeringBasis:
    if sel.k_t > f.s.size:
        raise ValidationError(
            f"selected rank {sel.k_t} exceeds available {f.s.size} singular values")
    b = np.ascontiguousarray(f.vt[:sel.k_t].T)
    return SteeringBasis(b=b, selection=sel)


def energy_curve(s: np.ndarray) -> list[tuple[int, float]]:
    s = _check_spectrum(s)
    total = float(np.sum(s * s))
    if total <= 0:
        raise DegenerateSpectrumError("all singular values are zero")
    cum = np.cumsum(s * s) / total
    return [(i + 1, float(cum[i])) for i in range(s.size)]
