"""Command-line entry point for the feature-map / style-vector exporter."""

import argparse
import logging
import sys

from .extract import ExtractionJob, run_job
from .vgg import LAYER_COUNT, SetupError


def build_parser():
    parser = argparse.ArgumentParser(
        prog="aesthrec-embed",
        description="Run VGG-19 over a photo corpus and export per-layer features.",
    )
    parser.add_argument("--images", required=True, help="directory of images")
    parser.add_argument(
        "--layers", default="8", help=f"comma-separated layer indices in 1..{LAYER_COUNT}"
    )
    parser.add_argument(
        "--weights",
        default="imagenet",
        help="'imagenet', 'random:SEED', or a path to a torchvision state dict",
    )
    parser.add_argument(
        "--export",
        choices=("style", "maps", "both"),
        default="style",
        help="style vectors (Gram), raw feature maps, or both",
    )
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument(
        "--no-deterministic",
        action="store_true",
        help="allow multi-threaded inference (outputs may vary between runs)",
    )
    parser.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None):
    logging.basicConfig(format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        layers = tuple(int(part) for part in args.layers.split(",") if part != "")
        job = ExtractionJob(
            images_dir=args.images,
            out_dir=args.out,
            layers=layers,
            weights=args.weights,
            deterministic=not args.no_deterministic,
            batch_size=args.batch_size,
        )
        exports = ("maps", "style") if args.export == "both" else (args.export,)
        written = run_job(job, exports=exports)
    except (SetupError, OSError, ValueError) as exc:
        message = " ".join(str(exc).splitlines()) or type(exc).__name__
        print(f"error: {message}", file=sys.stderr)
        return 1
    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
