"""Synthetic planted-shift datasets and the multi-method benchmark harness.

The generator plants a known global embedding offset v and records ground
truth, so recovery is checkable. Two prototype geometries are available:

* "uniform": classes drawn independently on the sphere. Easy for the
  zero-shot baseline at realistic logit scales, which saturates the
  softmax; useful for identity and format checks.
* "confusable": a tight cluster of classes plus deliberately ambiguous
  satellite classes whose private directions partially overlap the
  cluster's. Satellite positions are solved numerically so that, after
  the planted shift, their zero-shot logit gaps land on fixed negative
  targets. This leaves genuine headroom: entropy descent inside the
  steering subspace recovers a margin over zero-shot, while the same
  budget spent outside the subspace cannot.

Both geometries derive every random draw from the dataset seed through
fixed stream keys, so regeneration is bitwise identical.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .episode import AdaptConfig, run_episode
from .errors import NumericalError, ValidationError
from .numerics import softmax
from .spectral import RankSelection, SteeringBasis, energy_rank, steering_basis_for, thin_svd
from .storage import (
    DatasetManifest,
    SampleEntry,
    load_prototypes,
    load_views,
    save_manifest,
    write_bundle,
    write_results,
    write_summary,
)

METHODS = ("zeroshot", "sts-shared", "sts-perclass", "tps")
GEOMETRIES = ("uniform", "confusable")

# Stream keys: geometry draws come from [seed, STREAM_KEY], the views of
# sample j from [seed, STREAM_KEY, j, VIEW_KEY]. Distinct keys keep the
# per-sample noise independent of the geometry draws at every seed.
STREAM_KEY = 8
VIEW_KEY = 7

SYNTH_LOGIT_SCALE = 100.0
PLANT_ENERGY_FRACTION = 0.98

# Confusable-geometry dials. The cluster classes share a common heading
# with individual spreads; satellites sit lower on the shared axis and mix
# a fraction of a cluster class's private direction into their own.
CLUSTER_SPREAD = 0.45
CLUSTER_SPREAD_JITTER = 0.10
CLUSTER_PRIVATE = 0.30
SATELLITE_PRIVATE = 0.50
SATELLITE_HEADING = 0.2
GAP_TARGETS = (-0.3, -0.45, -0.6, -0.3, -0.45, -0.2)


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int
    dim: int
    views_per_sample: int = 64
    samples_per_class: int = 10
    shift_magnitude: float = 0.4
    shift_in_basis: bool = True
    noise_scale: float = 0.05
    seed: int = 0
    geometry: str = "uniform"

    def __post_init__(self):
        if not isinstance(self.num_classes, int) or self.num_classes < 2:
            raise ValidationError(f"num_classes must be >= 2, got {self.num_classes!r}")
        if not isinstance(self.dim, int) or self.dim < 2:
            raise ValidationError(f"dim must be >= 2, got {self.dim!r}")
        if not isinstance(self.views_per_sample, int) or self.views_per_sample < 1:
            raise ValidationError(
                f"views_per_sample must be >= 1, got {self.views_per_sample!r}")
        if not isinstance(self.samples_per_class, int) or self.samples_per_class < 1:
            raise ValidationError(
                f"samples_per_class must be >= 1, got {self.samples_per_class!r}")
        for name in ("shift_magnitude", "noise_scale"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val >= 0):
                raise ValidationError(f"{name} must be finite and >= 0, got {val!r}")
        if not isinstance(self.seed, int):
            raise ValidationError(f"seed must be an integer, got {self.seed!r}")
        if self.geometry not in GEOMETRIES:
            raise ValidationError(
                f"geometry must be one of {GEOMETRIES}, got {self.geometry!r}")
        if self.dim < self.num_classes:
            warnings.warn(
                f"dim {self.dim} below num_classes {self.num_classes}; "
                "prototypes cannot be linearly independent", UserWarning,
                stacklevel=2)


def _normalize(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x)


def _orthogonal_shift(rng, vt: np.ndarray, v_in: np.ndarray | None,
                      magnitude: float, dim: int) -> np.ndarray:
    """Random direction orthogonal to the prototype row space (and v_in)."""
    if vt.shape[0] >= dim:
        raise ValidationError(
            "shift_in_basis=false is impossible: the prototype row space "
            f"already spans all {dim} dimensions, leaving no complement")
    w = rng.standard_normal(dim)
    for row in vt:
        w = w - (w @ row) * row
    if v_in is not None and np.linalg.norm(v_in) > 0:
        vhat = _normalize(v_in)
        w = w - (w @ vhat) * vhat
    n = np.linalg.norm(w)
    if n < 1e-9:
        raise NumericalError("orthogonal-complement draw degenerated to zero")
    return magnitude * (w / n)


def _uniform_geometry(rng, spec: SynthSpec):
    z = rng.standard_normal((spec.num_classes, spec.dim))
    z = z / np.linalg.norm(z, axis=1, keepdims=True)
    f = thin_svd(z)
    sel = energy_rank(f.s, PLANT_ENERGY_FRACTION)
    b = f.vt[:sel.k_t].T
    if spec.shift_magnitude == 0:
        v = np.zeros(spec.dim)
        if not spec.shift_in_basis and f.vt.shape[0] >= spec.dim:
            raise ValidationError(
                "shift_in_basis=false is impossible: the prototype row space "
                f"already spans all {spec.dim} dimensions, leaving no complement")
    elif spec.shift_in_basis:
        g = rng.standard_normal(sel.k_t)
        v = spec.shift_magnitude * _normalize(b @ g)
    else:
        v = _orthogonal_shift(rng, f.vt, None, spec.shift_magnitude, spec.dim)
    return z, v


def _confusable_geometry(rng, spec: SynthSpec):
    """Cluster plus placed satellites, with the shift co-designed.

    Satellite mixing fractions are solved so the noiseless post-shift
    zero-shot logit gap of each satellite hits its target; a short fixed
    point between placement and the energy basis keeps the planted shift
    inside span(B) of the final prototypes.
    """
    c, d = spec.num_classes, spec.dim
    n_cluster = max(2, round(0.4 * c))
    n_sat = c - n_cluster
    n_frame = 2 + n_cluster + n_sat
    if d < n_frame:
        raise ValidationError(
            f"confusable geometry needs dim >= num_classes + 2 "
            f"(got dim {d} for {c} classes)")

    frame, _ = np.linalg.qr(rng.standard_normal((d, n_frame)))
    e0, e1 = frame[:, 0], frame[:, 1]
    cluster_private = [frame[:, 2 + i] for i in range(n_cluster)]
    sat_private = [frame[:, 2 + n_cluster + i] for i in range(n_sat)]
    spreads = CLUSTER_SPREAD + rng.uniform(
        -CLUSTER_SPREAD_JITTER, CLUSTER_SPREAD_JITTER, size=n_cluster)
    cluster = [_normalize(e0 + spreads[i] * e1 + CLUSTER_PRIVATE * cluster_private[i])
               for i in range(n_cluster)]
    gaps = [GAP_TARGETS[i % len(GAP_TARGETS)] for i in range(n_sat)]
    shift = spec.shift_magnitude
    v = shift * e1

    def satellite(mix, i):
        pair = i % n_cluster
        z = (e0 + SATELLITE_HEADING * e1
             + SATELLITE_PRIVATE * (mix * cluster_private[pair]
                                    + math.sqrt(max(1.0 - mix * mix, 0.0))
                                    * sat_private[i]))
        return _normalize(z)

    def gap_after_shift(mix, i, others, v_cur):
        z = satellite(mix, i)
        u = _normalize(z + v_cur)
        return SYNTH_LOGIT_SCALE * ((u @ z) - max(u @ p for p in others))

    def place(i, others, v_cur, target):
        grid = np.linspace(0.0, 0.98, 200)
        vals = np.array([gap_after_shift(r, i, others, v_cur) for r in grid])
        j = int(np.argmin(np.abs(vals - target)))
        lo = grid[max(j - 1, 0)]
        hi = grid[min(j + 1, len(grid) - 1)]
        g_lo = gap_after_shift(lo, i, others, v_cur)
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            g_mid = gap_after_shift(mid, i, others, v_cur)
            if (g_lo - target) * (g_mid - target) <= 0:
                hi = mid
            else:
                lo, g_lo = mid, g_mid
        return 0.5 * (lo + hi)

    mixes = [0.3] * n_sat
    sats = [satellite(mixes[i], i) for i in range(n_sat)]

    def others_for(i):
        return cluster + [s for si, s in enumerate(sats) if si != i]

    for _ in range(3):
        for i in range(n_sat):
            mixes[i] = place(i, others_for(i), v, gaps[i])
            sats[i] = satellite(mixes[i], i)

    def rebuild():
        z = np.vstack([np.array(cluster), np.array(sats)]) if n_sat else np.array(cluster)
        f = thin_svd(z)
        k = energy_rank(f.s, PLANT_ENERGY_FRACTION).k_t
        return z, f, k

    z, f, k = rebuild()
    if shift > 0:
        # keep v exactly inside span(B) of the prototypes it induced
        for _ in range(3):
            b = f.vt[:k].T
            v = shift * _normalize(b @ (b.T @ v))
            for i in range(n_sat):
                mixes[i] = place(i, others_for(i), v, gaps[i])
                sats[i] = satellite(mixes[i], i)
            z, f, k = rebuild()
        b = f.vt[:k].T
        v = shift * _normalize(b @ (b.T @ v))
    if not spec.shift_in_basis:
        v = _orthogonal_shift(rng, f.vt, v if shift > 0 else None, shift, d)
    return z, v


def synthesize(spec: SynthSpec, out_dir) -> Path:
    """Write prototype and view bundles plus a manifest; returns its path."""
    out = Path(out_dir)
    views_dir = out / "views"
    views_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng([spec.seed, STREAM_KEY])
    if spec.geometry == "uniform":
        z, v = _uniform_geometry(rng, spec)
    else:
        z, v = _confusable_geometry(rng, spec)

    proto_path = out / "prototypes.stse"
    write_bundle(z, proto_path)
    # ground truth for diagnostics: the planted shift as a 1 x D bundle
    shift_path = out / "planted_shift.stse"
    write_bundle(v[None, :], shift_path)

    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    samples = []
    for j, lab in enumerate(labels):
        eps = np.random.default_rng(
            [spec.seed, STREAM_KEY, j, VIEW_KEY]).standard_normal(
            (spec.views_per_sample, spec.dim))
        raw = z[lab][None, :] + v[None, :] + spec.noise_scale * eps
        rows = raw / np.linalg.norm(raw, axis=1, keepdims=True)
        path = views_dir / f"s{j:04d}.stse"
        write_bundle(rows, path)
        samples.append(SampleEntry(sample_id=f"s{j:04d}", path=path.resolve(),
                                   label=int(lab)))

    spec_doc = dataclasses.asdict(spec)
    fingerprint = hashlib.sha256(
        json.dumps(spec_doc, sort_keys=True).encode()).hexdigest()[:16]
    man = DatasetManifest(
        schema_version=1,
        class_names=tuple(f"class{i:02d}" for i in range(spec.num_classes)),
        templates=("synthetic",),
        logit_scale=SYNTH_LOGIT_SCALE,
        prototype_paths=(proto_path.resolve(),),
        samples=tuple(samples),
        augmentation=(
            f"synthetic views: normalize(prototype + planted shift + gaussian "
            f"noise); geometry={spec.geometry}, shift={spec.shift_magnitude}, "
            f"in_basis={spec.shift_in_basis}, noise={spec.noise_scale}, "
            f"seed={spec.seed}"),
        extractor={"model_name": "synthetic-planted-shift",
                   "checkpoint_hash": fingerprint,
                   "planted_shift_bundle": "planted_shift.stse"},
        root=out,
    )
    mpath = out / "manifest.json"
    save_manifest(man, mpath)
    return mpath


@dataclass(frozen=True)
class MethodRow:
    method: str
    accuracy: float
    mean_entropy_delta: float
    mean_adapt_time: float
    param_count: int


@dataclass(frozen=True)
class BenchReport:
    rows: tuple[MethodRow, ...]
    config_echo: dict
    dataset_fingerprint: str

    def to_json_dict(self) -> dict:
        return {
            "rows": [dataclasses.asdict(r) for r in self.rows],
            "config": self.config_echo,
            "dataset_fingerprint": self.dataset_fingerprint,
        }

    def text_table(self) -> str:
        header = f"{'method':<14}{'accuracy':>10}{'mean dH':>12}{'ms/sample':>12}{'params':>9}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r.method:<14}{r.accuracy:>10.4f}{r.mean_entropy_delta:>12.5f}"
                f"{1e3 * r.mean_adapt_time:>12.3f}{r.param_count:>9d}")
        return "\n".join(lines)


def _dataset_fingerprint(man: DatasetManifest) -> str:
    h = hashlib.sha256()
    h.update(json.dumps({
        "class_names": list(man.class_names),
        "templates": list(man.templates),
        "logit_scale": man.logit_scale,
    }, sort_keys=True).encode())
    for p in man.prototype_paths:
        h.update(p.read_bytes())
    for s in man.samples:
        h.update(s.sample_id.encode())
        h.update(str(s.label).encode())
        h.update(s.path.read_bytes())
    return h.hexdigest()[:16]


def _method_setup(method: str, cfg: AdaptConfig, proto, engine_basis: SteeringBasis):
    c, d = proto.num_classes, proto.dim
    if method == "zeroshot":
        mcfg = dataclasses.replace(
            cfg, optimizer=dataclasses.replace(cfg.optimizer, steps=0))
        return mcfg, engine_basis, 0
    if method == "sts-shared":
        return dataclasses.replace(cfg, mode="shared"), engine_basis, engine_basis.k_t
    if method == "sts-perclass":
        return (dataclasses.replace(cfg, mode="per_class"), engine_basis,
                c * engine_basis.k_t)
    if method == "tps":
        identity = SteeringBasis(
            b=np.eye(d),
            selection=RankSelection(method="fixed", k_t=d, threshold=None,
                                    energy_captured=1.0))
        return dataclasses.replace(cfg, mode="per_class"), identity, c * d
    raise ValidationError(f"unknown method {method!r}; choose from {METHODS}")


def evaluate(man: DatasetManifest, methods, cfg: AdaptConfig,
             workers: int = 1, out_dir=None) -> BenchReport:
    """Run every episode for each method and aggregate a report.

    Episodes are independent; with workers > 1 they run on a thread pool
    and are merged back in manifest order, so the report does not depend
    on scheduling.
    """
    methods = list(methods)
    if not methods:
        raise ValidationError("methods list is empty")
    if len(set(methods)) != len(methods):
        raise ValidationError("methods list contains duplicates")
    for m in methods:
        if m not in METHODS:
            raise ValidationError(f"unknown method {m!r}; choose from {METHODS}")
    if not isinstance(workers, int) or workers < 1:
        raise ValidationError(f"workers must be a positive integer, got {workers!r}")
    unlabeled = [s.sample_id for s in man.samples if s.label is None]
    if unlabeled:
        raise ValidationError(f"unlabeled samples: {', '.join(unlabeled)}")
    if not man.samples:
        raise ValidationError("manifest has no samples")

    proto = load_prototypes(man)
    engine_basis = steering_basis_for(proto.z, cfg.rank)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    rows = []
    for method in methods:
        mcfg, basis, params = _method_setup(method, cfg, proto, engine_basis)

        def run_one(entry):
            return run_episode(proto, basis, load_views(man, entry), mcfg)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run_one, man.samples))
        else:
            results = [run_one(s) for s in man.samples]

        correct = sum(1 for s, r in zip(man.samples, results)
                      if r.predicted_index == s.label)
        rows.append(MethodRow(
            method=method,
            accuracy=correct / len(results),
            mean_entropy_delta=float(np.mean(
                [r.entropy_before - r.entropy_after for r in results])),
            mean_adapt_time=float(np.mean([r.wall_time_adapt for r in results])),
            param_count=params,
        ))
        if out is not None:
            write_results(results, out / f"results_{method}.jsonl")

    echo = {
        "rho": cfg.rho,
        "lambda_reg": cfg.lambda_reg,
        "mode": cfg.mode,
        "rank": dataclasses.asdict(cfg.rank),
        "optimizer": dataclasses.asdict(cfg.optimizer),
        "logit_scale_override": cfg.logit_scale_override,
        "include_original": cfg.include_original,
        "seed": cfg.seed,
        "workers": workers,
        "methods": methods,
    }
    report = BenchReport(rows=tuple(rows), config_echo=echo,
                         dataset_fingerprint=_dataset_fingerprint(man))
    if out is not None:
        write_summary(report.to_json_dict(), out / "report.json")
    return report
