"""Test-time steering of frozen class prototypes in a spectral subspace.

Classification uses cosine similarity between precomputed embeddings and
unit-norm class prototypes. Per test sample, the prototypes are shifted
inside the span of the top right-singular vectors of the prototype matrix
by a few coefficients fit to minimize marginal entropy over augmented
views; everything runs on plain numpy arrays, no encoder in sight.
"""
from .bench import BenchReport, MethodRow, SynthSpec, evaluate, synthesize
from .episode import AdaptConfig, EpisodeResult, run_episode
from .errors import (
    AnnihilatedPrototypeError,
    CorruptPayloadError,
    DegenerateEmbeddingError,
    DegenerateSpectrumError,
    FormatError,
    InvalidDataError,
    NumericalError,
    StorageError,
    StsError,
    ValidationError,
)
from .objective import (
    FilterResult,
    LossBreakdown,
    ViewBatch,
    filter_views,
    marginal_distribution,
    sts_loss_and_grad,
)
from .optimizer import OptimizerConfig, OptimizerState, effective_lr, step
from .prototypes import PrototypeSet, build_prototypes, zero_shot_probs
from .spectral import (
    RankPolicy,
    RankSelection,
    SteeringBasis,
    SvdFactors,
    energy_curve,
    energy_rank,
    extract_basis,
    fixed_rank,
    gavish_donoho_rank,
    steering_basis_for,
    thin_svd,
)
from .steering import SteeringCoefficients, SteeringState, apply_shift
from .storage import (
    DatasetManifest,
    SampleEntry,
    load_manifest,
    load_prototypes,
    load_views,
    read_bundle,
    read_results,
    save_manifest,
    summarize_results,
    write_bundle,
    write_results,
    write_summary,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig", "AnnihilatedPrototypeError", "BenchReport",
    "CorruptPayloadError", "DatasetManifest", "DegenerateEmbeddingError",
    "DegenerateSpectrumError", "EpisodeResult", "FilterResult", "FormatError",
    "InvalidDataError", "LossBreakdown", "MethodRow", "NumericalError",
    "OptimizerConfig", "OptimizerState", "PrototypeSet", "RankPolicy",
    "RankSelection", "SampleEntry", "SteeringBasis", "SteeringCoefficients",
    "SteeringState", "StorageError", "StsError", "SvdFactors", "SynthSpec",
    "ValidationError", "ViewBatch", "apply_shift", "build_prototypes",
    "effective_lr", "energy_curve", "energy_rank", "evaluate", "extract_basis",
    "filter_views", "fixed_rank", "gavish_donoho_rank", "load_manifest",
    "load_prototypes", "load_views", "marginal_distribution", "read_bundle",
    "read_results", "run_episode", "save_manifest", "steering_basis_for",
    "step", "sts_loss_and_grad", "summarize_results", "synthesize", "thin_svd",
    "write_bundle", "write_results", "write_summary", "zero_shot_probs",
]
