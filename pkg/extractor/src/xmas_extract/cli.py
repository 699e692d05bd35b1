"""`xmas-extract`: dump a model's cross-modal attention for the selection
pipeline.

Exit codes: 0 success, 1 extraction failure (unloadable checkpoint, no
usable examples), 2 bad arguments.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

from xmas_extract.adapters import CheckpointLoadError, UnknownModelError
from xmas_extract.extract import extract
from xmas_extract.spec import ExtractionSpec


def _build_parser():
    p = argparse.ArgumentParser(
        prog="xmas-extract",
        description="extract layer-summed cross-modal attention to an .xmad dump",
    )
    p.add_argument("--model", required=True, help="model id (see adapters registry)")
    p.add_argument(
        "--checkpoints", required=True,
        help="comma-separated checkpoint tags or paths",
    )
    p.add_argument("--out", required=True, type=Path, help="output .xmad path")
    p.add_argument(
        "--heads", choices=("mean", "concat"), default="mean",
        help="head handling: mean over per-head maps, or the single-softmax "
        "concatenated-projection variant",
    )
    p.add_argument(
        "--layers", default="all",
        help='"all" or comma-separated 0-based decoder layer indices',
    )
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("XMAS_LOG", "INFO").upper(),
        format="%(name)s: %(message)s",
        stream=sys.stderr,
    )
    args = _build_parser().parse_args(argv)
    checkpoints = [c for c in args.checkpoints.split(",") if c]
    layers = "all" if args.layers == "all" else args.layers.split(",")
    try:
        spec = ExtractionSpec(
            model_id=args.model,
            checkpoints=checkpoints,
            out_path=args.out,
            heads=args.heads,
            layers=layers,
        )
    except ValueError as exc:
        print(f"xmas-extract: {exc}", file=sys.stderr)
        return 2
    try:
        written = extract(spec)
    except (UnknownModelError, ValueError) as exc:
        print(f"xmas-extract: {exc}", file=sys.stderr)
        return 2
    except CheckpointLoadError as exc:
        print(f"xmas-extract: {exc}", file=sys.stderr)
        return 1
    if written == 0:
        print("xmas-extract: no examples survived span detection", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
