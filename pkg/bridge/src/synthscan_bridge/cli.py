"""synthscan-bridge command line.

Subcommands:

    extract   run an extraction job file to an ESF1 feature set
    regions   embed an image and its high-variance regions to an ERE1 file
    rewrite   serve the rewriter JSONL protocol on stdin/stdout
    embed     serve the text-embedder JSONL protocol on stdin/stdout
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .errors import BridgeError
from .extract import ExtractionJob, RegionConfig, extract_features, extract_regions, parse_job_file
from .rewrite import REWRITE_MODES, run_embedder, run_rewriter


def _timesteps(text: str) -> tuple:
    try:
        return tuple(int(p) for p in text.split(",") if p.strip() != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad timestep list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synthscan-bridge",
        description="Feature-extraction bridge emitting synthscan's file formats.",
    )
    parser.add_argument("--version", action="version", version=f"synthscan-bridge {__version__}")
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("extract", help="run an extraction job to an ESF1 file")
    p.add_argument("--job", required=True, help="image table: path<TAB>label[<TAB>tag]")
    p.add_argument("--out", required=True, help="output .esf path")
    p.add_argument("--checkpoint", default="pixel-ddpm-24")
    p.add_argument("--timesteps", type=_timesteps, default=tuple(range(0, 25, 3)))
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--device", default="cpu")

    p = subs.add_parser("regions", help="embed an image and its regions to an ERE1 file")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output .ere path")
    p.add_argument("--checkpoint", default="pixel-ddpm-24")
    p.add_argument("--grid", type=int, default=4)
    p.add_argument("--max-regions", type=int, default=4)
    p.add_argument("--min-variance", type=float, default=5e-4)

    p = subs.add_parser("rewrite", help="serve the rewriter protocol on stdin/stdout")
    p.add_argument("--mode", choices=REWRITE_MODES, default="identity")

    p = subs.add_parser("embed", help="serve the text-embedder protocol on stdin/stdout")
    p.add_argument("--dim", type=int, default=768)
    p.add_argument("--seed", type=int, default=7)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.subcommand == "extract":
            job = ExtractionJob(
                images=parse_job_file(args.job),
                checkpoint=args.checkpoint,
                timesteps=args.timesteps,
                out_path=args.out,
                batch_size=args.batch,
                device=args.device,
            )
            fs = extract_features(job)
            n, n_ts, dim = fs.vectors.shape
            print(f"extracted {n} images x {n_ts} timesteps (dim {dim}) -> {args.out}")
        elif args.subcommand == "regions":
            cfg = RegionConfig(grid=args.grid, max_regions=args.max_regions,
                               min_variance=args.min_variance)
            count = extract_regions(args.image, args.out, args.checkpoint, cfg)
            print(f"wrote {count} region rows -> {args.out}")
        elif args.subcommand == "rewrite":
            return run_rewriter(sys.stdin, sys.stdout, args.mode)
        elif args.subcommand == "embed":
            return run_embedder(sys.stdin, sys.stdout, args.dim, args.seed)
        return 0
    except BridgeError as exc:
        print(f"synthscan-bridge: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"synthscan-bridge: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
