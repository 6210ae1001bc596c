"""Marginal-entropy objective over augmented views.

The adapted prototypes re-enter the loss through two couplings: the
softmax over scaled cosines, and the renormalization of each shifted
prototype back to the unit sphere. Both are differentiated analytically
here; the gradient is returned in coefficient space (the span of the
steering basis), never in the ambient embedding space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .numerics import shannon_entropy, softmax
from .prototypes import PrototypeSet
from .spectral import SteeringBasis
from .steering import SteeringCoefficients, shifted_geometry

UNIT_NORM_TOL = 1e-4
NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class ViewBatch:
    """Augmented views of a single test sample, one unit row per view."""

    sample_id: str
    v: np.ndarray
    original_index: int = 0

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValidationError(
                f"views must be a non-empty 2-d array, got shape {np.shape(self.v)}")
        if not np.all(np.isfinite(v)):
            raise ValidationError(f"views for {self.sample_id!r} contain non-finite values")
        norms = np.linalg.norm(v, axis=1)
        worst = float(np.max(np.abs(norms - 1.0)))
        if worst > UNIT_NORM_TOL:
            raise ValidationError(
                f"view rows must be unit-normalized (max deviation {worst:.3e})")
        if not (0 <= self.original_index < v.shape[0]):
            raise ValidationError(
                f"original_index {self.original_index} out of range for {v.shape[0]} views")
        object.__setattr__(self, "v", v)

    @property
    def num_views(self) -> int:
        return self.v.shape[0]

    @property
    def dim(self) -> int:
        return self.v.shape[1]


@dataclass(frozen=True)
class FilterResult:
    """Indices of the views kept by the confidence filter."""

    retained: tuple[int, ...]
    per_view_entropy: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    entropy_term: float
    reg_term: float
    total: float
    marginal: np.ndarray
    grad: np.ndarray = field(repr=False)


def filter_views(views: ViewBatch, proto: PrototypeSet, rho: float) -> FilterResult:
    """Keep the max(1, floor(rho*N)) views with lowest prediction entropy.

    Entropies are computed against the initial prototypes and ties are
    broken toward the lower view index. The retained tuple is sorted.
    """
    if not isinstance(rho, (int, float)) or not math.isfinite(rho) or not 0.0 < rho <= 1.0:
        raise ValidationError(f"rho must lie in (0, 1], got {rho!r}")
    if views.dim != proto.dim:
        raise ValidationError(
            f"view dim {views.dim} does not match prototype dim {proto.dim}")
    probs = softmax(proto.logit_scale * (views.v @ proto.z.T))
    ent = shannon_entropy(probs)
    n_filt = max(1, int(math.floor(rho * views.num_views)))
    order = np.argsort(ent, kind="stable")[:n_filt]
    return FilterResult(retained=tuple(sorted(int(i) for i in order)),
                        per_view_entropy=ent)


def marginal_distribution(views: np.ndarray, adapted: np.ndarray,
                          logit_scale: float) -> np.ndarray:
    """Average the per-view softmax distributions into one marginal."""
    views = np.asarray(views, dtype=np.float64)
    adapted = np.asarray(adapted, dtype=np.float64)
    if views.ndim != 2 or views.shape[0] < 1:
        raise ValidationError(
            f"views must be a non-empty 2-d array, got shape {views.shape}")
    if adapted.ndim != 2 or adapted.shape[1] != views.shape[1]:
        raise ValidationError(
            f"prototype shape {adapted.shape} incompatible with view dim {views.shape[1]}")
    if not (isinstance(logit_scale, (int, float))
            and math.isfinite(logit_scale) and logit_scale > 0):
        raise ValidationError(f"logit_scale must be positive and finite, got {logit_scale!r}")
    probs = softmax(float(logit_scale) * (views @ adapted.T))
    return probs.mean(axis=0)


def sts_loss_and_grad(proto: PrototypeSet, basis: SteeringBasis,
                      coeffs: SteeringCoefficients, filter_result: FilterResult,
                      views: ViewBatch, lambda_reg: float,
                      logit_scale: float) -> LossBreakdown:
    """Marginal entropy plus shift-norm penalty, with its analytic gradient.

    The entropy chain runs softmax -> cosine -> renormalization of the
    shifted prototypes -> steering basis. The penalty is lambda_reg times
    the Euclidean norm of the shift (summed over classes in per-class
    mode), with the direction safeguarded near the origin.
    """
    if not (isinstance(lambda_reg, (int, float))
            and math.isfinite(lambda_reg) and lambda_reg >= 0):
        raise ValidationError(f"lambda_reg must be non-negative, got {lambda_reg!r}")
    if not (isinstance(logit_scale, (int, float))
            and math.isfinite(logit_scale) and logit_scale > 0):
        raise ValidationError(f"logit_scale must be positive and finite, got {logit_scale!r}")
    kappa = float(logit_scale)
    rows = views.v[list(filter_result.retained)]
    if rows.shape[0] < 1:
        raise ValidationError("filter result retains no views")

    delta, w, norms, adapted = shifted_geometry(proto, basis, coeffs)
    n_filt = rows.shape[0]

    logits = kappa * (rows @ adapted.T)
    probs = softmax(logits)
    pbar = probs.mean(axis=0)
    ent = float(shannon_entropy(pbar))

    # d ent / d logits, folded through the view average
    e = -(np.log(np.clip(pbar, 1e-300, None)) + 1.0)
    s = probs * (e[None, :] - (probs @ e)[:, None]) / n_filt
    q = s.T @ rows
    # renormalization jacobian: project q off each adapted row, scale by 1/|w|
    gw = kappa * (q - np.sum(q * adapted, axis=1, keepdims=True) * adapted)
    gw /= norms[:, None]

    if coeffs.mode == "shared":
        g_ent = basis.b.T @ gw.sum(axis=0)
        dn = float(np.linalg.norm(delta))
        reg = lambda_reg * dn
        g_reg = lambda_reg * (basis.b.T @ delta[0]) / max(dn, NORM_FLOOR)
    else:
        g_ent = gw @ basis.b
        dns = np.linalg.norm(delta, axis=1)
        reg = float(lambda_reg * dns.sum())
        g_reg = lambda_reg * (delta @ basis.b) / np.maximum(dns, NORM_FLOOR)[:, None]

    grad = g_ent + g_reg
    if not np.all(np.isfinite(grad)):
        raise NumericalError("gradient contains non-finite values")

    total = ent + float(reg)
    return LossBreakdown(entropy_term=ent, reg_term=float(reg), total=total,
                         marginal=pbar, grad=grad)
