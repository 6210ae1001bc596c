"""One adaptation episode per test sample, with structural reset.

Coefficients and optimizer state are created inside run_episode and
dropped at return, so no adaptation state can leak across samples. The
wall time covers filtering, optimization, and final scoring only; it
never includes encoder work because none happens here.
"""
from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import StsError, ValidationError
from .numerics import shannon_entropy
from .objective import FilterResult, ViewBatch, filter_views, marginal_distribution, sts_loss_and_grad
from .optimizer import OptimizerConfig, OptimizerState, step
from .prototypes import PrototypeSet
from .spectral import RankPolicy, SteeringBasis
from .steering import MODES, SteeringCoefficients, SteeringState, apply_shift


@dataclass(frozen=True)
class AdaptConfig:
    rho: float = 0.1
    lambda_reg: float = 0.01
    mode: str = "shared"
    rank: RankPolicy = field(default_factory=RankPolicy)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    logit_scale_override: float | None = None
    seed: int = 0
    include_original: bool = False

    def __post_init__(self):
        if not (isinstance(self.rho, (int, float)) and math.isfinite(self.rho)
                and 0.0 < self.rho <= 1.0):
            raise ValidationError(f"rho must lie in (0, 1], got {self.rho!r}")
        if not (isinstance(self.lambda_reg, (int, float))
                and math.isfinite(self.lambda_reg) and self.lambda_reg >= 0):
            raise ValidationError(f"lambda_reg must be >= 0, got {self.lambda_reg!r}")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.logit_scale_override is not None and not (
                isinstance(self.logit_scale_override, (int, float))
                and math.isfinite(self.logit_scale_override)
                and self.logit_scale_override > 0):
            raise ValidationError(
                f"logit_scale_override must be positive, got {self.logit_scale_override!r}")
        if not isinstance(self.seed, int):
            raise ValidationError(f"seed must be an integer, got {self.seed!r}")


@dataclass(frozen=True)
class EpisodeResult:
    sample_id: str
    predicted_index: int
    predicted_name: str
    marginal_probs_before: np.ndarray
    marginal_probs_after: np.ndarray
    entropy_before: float
    entropy_after: float
    shift_norm: float
    n_filtered: int
    wall_time_adapt: float
    steps_taken: int
    coefficients: SteeringCoefficients = field(repr=False, compare=False, default=None)

    def to_json_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "predicted_class": {"index": self.predicted_index,
                                "name": self.predicted_name},
            "marginal_probs_before": [float(p) for p in self.marginal_probs_before],
            "marginal_probs_after": [float(p) for p in self.marginal_probs_after],
            "entropy_before": self.entropy_before,
            "entropy_after": self.entropy_after,
            "shift_norm": self.shift_norm,
            "n_filtered": self.n_filtered,
            "wall_time_adapt": self.wall_time_adapt,
            "steps_taken": self.steps_taken,
        }


def _prediction_rows(views: ViewBatch, fr: FilterResult, include_original: bool):
    idx = set(fr.retained)
    if include_original:
        idx.add(views.original_index)
    return views.v[sorted(idx)]


def run_episode(proto: PrototypeSet, basis: SteeringBasis, views: ViewBatch,
                cfg: AdaptConfig) -> EpisodeResult:
    """Filter, descend the marginal entropy, score with adapted prototypes."""
    t0 = time.perf_counter()
    try:
        scale = (float(cfg.logit_scale_override)
                 if cfg.logit_scale_override is not None else proto.logit_scale)
        proto_f = (dataclasses.replace(proto, logit_scale=scale)
                   if scale != proto.logit_scale else proto)
        fr = filter_views(views, proto_f, cfg.rho)
        rows = _prediction_rows(views, fr, cfg.include_original)

        if cfg.mode == "shared":
            gamma = np.zeros(basis.k_t)
        else:
            gamma = np.zeros((proto.num_classes, basis.k_t))
        state = OptimizerState.fresh(gamma.shape)
        for _ in range(cfg.optimizer.steps):
            coeffs = SteeringCoefficients(mode=cfg.mode, values=gamma)
            out = sts_loss_and_grad(proto, basis, coeffs, fr, views,
                                    cfg.lambda_reg, scale)
            gamma, state = step(gamma, out.grad, state, cfg.optimizer)

        final = SteeringCoefficients(mode=cfg.mode, values=gamma)
        adapted = apply_shift(proto, basis, final)
        marg_before = marginal_distribution(rows, proto.z, scale)
        marg_after = marginal_distribution(rows, adapted, scale)
        predicted = int(np.argmax(marg_after))
        shift_norm = SteeringState.from_coefficients(basis, final).shift_norm
    except StsError as exc:
        detail = exc.args[0] if exc.args else exc.__class__.__name__
        exc.args = (f"sample {views.sample_id!r}: {detail}",) + exc.args[1:]
        raise
    wall = time.perf_counter() - t0
    return EpisodeResult(
        sample_id=views.sample_id,
        predicted_index=predicted,
        predicted_name=proto.class_names[predicted],
        marginal_probs_before=marg_before,
        marginal_probs_after=marg_after,
        entropy_before=float(shannon_entropy(marg_before)),
        entropy_after=float(shannon_entropy(marg_after)),
        shift_norm=shift_norm,
        n_filtered=len(fr.retained),
        wall_time_adapt=wall,
        steps_taken=cfg.optimizer.steps,
        coefficients=final,
    )
