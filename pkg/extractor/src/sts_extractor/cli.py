"""Command-line front end: sts-extract.

Exit codes: 0 success, 2 invalid job or arguments, 4 filesystem failure.

The image root must hold one subdirectory per class. Class names are taken
from --classes when given (comma separated, order defines the label
indices) and from the sorted subdirectory names otherwise.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bundles import ExtractError
from .job import DEFAULT_TEMPLATES, GENERIC_TEMPLATES, SINGLE_TEMPLATE, ExtractJob, extract

TEMPLATE_SETS = {
    "single": (SINGLE_TEMPLATE,),
    "generic": GENERIC_TEMPLATES,
    "all": DEFAULT_TEMPLATES,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sts-extract", description=__doc__)
    p.add_argument("--images", required=True, help="image root directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dataset-name", default="dataset")
    p.add_argument("--classes", default=None,
                   help="comma-separated class names; default: subdirectories")
    p.add_argument("--templates", choices=sorted(TEMPLATE_SETS), default="all")
    p.add_argument("--views", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", choices=["clip", "stub"], default="clip")
    p.add_argument("--checkpoint", default="openai/clip-vit-base-patch16")
    p.add_argument("--device", default="cpu")
    p.add_argument("--stub-dim", type=int, default=64,
                   help="embedding width of the stub encoder")
    return p


def _class_names(args) -> tuple:
    if args.classes is not None:
        return tuple(s.strip() for s in args.classes.split(",") if s.strip())
    root = Path(args.images)
    if not root.is_dir():
        raise ExtractError(f"image root {root} is not a directory")
    return tuple(sorted(p.name for p in root.iterdir() if p.is_dir()))


def _encoder(args):
    if args.model == "stub":
        from .encoders import StubEncoder
        return StubEncoder(dim=args.stub_dim)
    from .encoders import ClipEncoder
    return ClipEncoder(checkpoint=args.checkpoint, device=args.device)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = ExtractJob(dataset_name=args.dataset_name,
                         image_root=Path(args.images),
                         class_names=_class_names(args),
                         out_dir=Path(args.out),
                         templates=TEMPLATE_SETS[args.templates],
                         views_per_sample=args.views,
                         seed=args.seed)
        manifest = extract(job, _encoder(args))
    except ExtractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    print(manifest)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
