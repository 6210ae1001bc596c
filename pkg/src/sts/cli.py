"""Command-line front end.

Subcommands: synth (generate a planted-shift dataset), rank (rank
selection and energy curve), adapt (run episodes over one manifest),
bench (multi-method comparison table), inspect (validate artifacts).

Exit codes: 0 success, 2 validation error, 3 numerical error, 4 I/O or
format error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import METHODS, SynthSpec, evaluate, synthesize
from .episode import AdaptConfig, run_episode
from .errors import StsError
from .optimizer import OptimizerConfig
from .spectral import RankPolicy, energy_curve, steering_basis_for, thin_svd
from .storage import (
    load_manifest,
    load_prototypes,
    load_views,
    read_bundle,
    summarize_results,
    write_results,
    write_summary,
)


def _add_adapt_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=5e-3, help="learning rate (default 5e-3)")
    p.add_argument("--steps", type=int, default=1, help="optimizer steps per episode")
    p.add_argument("--rho", type=float, default=0.1,
                   help="confidence filter fraction in (0, 1]")
    p.add_argument("--lambda-reg", type=float, default=0.01, dest="lambda_reg",
                   help="shift-norm penalty weight")
    p.add_argument("--rank", choices=["gd", "energy", "fixed"], default="gd",
                   help="rank selection rule for the steering basis")
    p.add_argument("--energy", type=float, default=0.98,
                   help="cumulative energy fraction for --rank energy")
    p.add_argument("--fixed-k", type=int, default=None, dest="fixed_k",
                   help="rank for --rank fixed")
    p.add_argument("--mode", choices=["shared", "per-class"], default="shared",
                   help="one coefficient vector for all classes, or one per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--logit-scale", type=float, default=None, dest="logit_scale",
                   help="override the manifest's logit scale")
    p.add_argument("--include-original", action="store_true",
                   help="add the unaugmented view to the prediction marginal")


def _adapt_config(args) -> AdaptConfig:
    return AdaptConfig(
        rho=args.rho,
        lambda_reg=args.lambda_reg,
        mode=args.mode.replace("-", "_"),
        rank=RankPolicy(method=args.rank, energy_fraction=args.energy,
                        fixed_k=args.fixed_k),
        optimizer=OptimizerConfig(lr=args.lr, steps=args.steps),
        logit_scale_override=args.logit_scale,
        seed=args.seed,
        include_original=args.include_original,
    )


def _cmd_synth(args) -> int:
    spec = SynthSpec(
        num_classes=args.classes, dim=args.dim,
        views_per_sample=args.views, samples_per_class=args.samples_per_class,
        shift_magnitude=args.shift, shift_in_basis=not args.orth_shift,
        noise_scale=args.noise, seed=args.seed, geometry=args.geometry)
    mpath = synthesize(spec, args.out)
    print(mpath)
    return 0


def _cmd_rank(args) -> int:
    man = load_manifest(args.manifest)
    proto = load_prototypes(man)
    f = thin_svd(proto.z)
    policy = RankPolicy(method=args.rank, energy_fraction=args.energy,
                        fixed_k=args.fixed_k)
    sel = policy.select(f.s, proto.num_classes, proto.dim)
    print(f"method           {sel.method}")
    print(f"k_t              {sel.k_t}")
    print(f"threshold        {sel.threshold if sel.threshold is not None else '-'}")
    print(f"energy_captured  {sel.energy_captured:.6f}")
    print("singular_values  " + " ".join(f"{x:.6g}" for x in f.s))
    if args.csv:
        rows = energy_curve(f.s)
        text = "k,cumulative_energy\n" + "\n".join(
            f"{k},{e:.10f}" for k, e in rows) + "\n"
        Path(args.csv).write_text(text)
        print(f"energy curve written to {args.csv}")
    return 0


def _cmd_adapt(args) -> int:
    man = load_manifest(args.manifest)
    cfg = _adapt_config(args)
    proto = load_prototypes(man)
    basis = steering_basis_for(proto.z, cfg.rank)
    results = [run_episode(proto, basis, load_views(man, s), cfg)
               for s in man.samples]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_results(results, out / "results.jsonl")
    echo = {"rho": cfg.rho, "lambda_reg": cfg.lambda_reg, "mode": cfg.mode,
            "rank": args.rank, "steps": cfg.optimizer.steps,
            "lr": cfg.optimizer.lr, "k_t": basis.k_t}
    labels = {s.sample_id: s.label for s in man.samples}
    if all(v is not None for v in labels.values()):
        summary = summarize_results(results, labels, config_echo=echo)
    else:
        summary = {
            "num_samples": len(results),
            "accuracy": None,
            "mean_entropy_delta": float(
                sum(r.entropy_before - r.entropy_after for r in results)
                / len(results)),
            "mean_adapt_time": float(
                sum(r.wall_time_adapt for r in results) / len(results)),
            "config": echo,
        }
    write_summary(summary, out / "summary.json")
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_bench(args) -> int:
    man = load_manifest(args.manifest)
    cfg = _adapt_config(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    report = evaluate(man, methods, cfg, workers=args.workers,
                      out_dir=args.out)
    print(report.text_table())
    return 0


def _cmd_inspect(args) -> int:
    if args.bundle:
        m = read_bundle(args.bundle)
        print(f"bundle           {args.bundle}")
        print(f"rows x cols      {m.shape[0]} x {m.shape[1]}")
        print(f"value range      [{m.min():.6g}, {m.max():.6g}]")
        print(f"mean row norm    {float((m * m).sum(axis=1).mean() ** 0.5):.6g}")
        print("ok")
        return 0
    man = load_manifest(args.manifest)
    proto = load_prototypes(man)
    f = thin_svd(proto.z)
    from .spectral import energy_rank, gavish_donoho_rank
    gd = gavish_donoho_rank(f.s, proto.num_classes, proto.dim)
    en = energy_rank(f.s, 0.98)
    print(f"manifest         {args.manifest}")
    print(f"classes          {proto.num_classes}")
    print(f"dim              {proto.dim}")
    print(f"templates        {len(man.templates)}")
    print(f"samples          {len(man.samples)}")
    labeled = sum(1 for s in man.samples if s.label is not None)
    print(f"labeled          {labeled}")
    print(f"logit_scale      {man.logit_scale}")
    print("singular_values  " + " ".join(f"{x:.6g}" for x in f.s))
    print(f"rank gd          {gd.k_t}")
    print(f"rank energy(.98) {en.k_t}")
    print("ok")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sts",
        description="Steer frozen class prototypes in a spectral subspace "
                    "by test-time marginal-entropy descent.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic planted-shift dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--views", type=int, default=64)
    p.add_argument("--samples-per-class", type=int, default=10,
                   dest="samples_per_class")
    p.add_argument("--shift", type=float, default=0.4)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--geometry", choices=["uniform", "confusable"],
                   default="uniform")
    p.add_argument("--orth-shift", action="store_true", dest="orth_shift",
                   help="plant the shift orthogonal to the prototype row space")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("rank", help="rank selection and energy curve")
    p.add_argument("--manifest", required=True)
    p.add_argument("--rank", choices=["gd", "energy", "fixed"], default="gd")
    p.add_argument("--energy", type=float, default=0.98)
    p.add_argument("--fixed-k", type=int, default=None, dest="fixed_k")
    p.add_argument("--csv", default=None, help="write the energy curve CSV here")
    p.set_defaults(func=_cmd_rank)

    p = sub.add_parser("adapt", help="run adaptation episodes over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="directory for results + summary")
    _add_adapt_flags(p)
    p.set_defaults(func=_cmd_adapt)

    p = sub.add_parser("bench", help="compare methods on one labeled manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--methods", default=",".join(METHODS),
                   help="comma-separated subset of: " + ", ".join(METHODS))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None, help="directory for per-method results")
    _add_adapt_flags(p)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("inspect", help="validate a bundle or manifest")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--manifest")
    g.add_argument("--bundle")
    p.set_defaults(func=_cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
