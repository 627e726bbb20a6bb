"""Command-line surface: ``plotkit <figure> <results_dir> [-o out]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import matplotlib

from .figures import FORMATS, RENDERERS
from .io import ResultsError

EXIT_OK = 0
EXIT_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plotkit",
        description="Render kerrsync result directories into figures")
    parser.add_argument("figure", choices=sorted(RENDERERS),
                        help="which figure layout to render")
    parser.add_argument("results_dir",
                        help="result directory written by the kerrsync CLI")
    parser.add_argument("-o", "--out", default=None,
                        help="output path; with a .png/.svg/.pdf suffix it "
                             "fixes the single output file, otherwise it is "
                             "used as the base name (default: ./<figure>)")
    parser.add_argument("--formats", default="png",
                        help="comma-separated subset of png,svg,pdf")
    parser.add_argument("--reproducible", action="store_true",
                        help="strip volatile metadata so identical inputs "
                             "give byte-identical images")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    formats = tuple(f.strip().lstrip(".") for f in args.formats.split(",") if f.strip())
    out_base = None
    if args.out is not None:
        out = Path(args.out)
        if out.suffix.lstrip(".") in FORMATS:
            out_base, formats = out.with_suffix(""), (out.suffix.lstrip("."),)
        else:
            out_base = out
    if args.reproducible:
        # stable SVG element ids; the renderers strip date metadata
        matplotlib.rcParams["svg.hashsalt"] = "plotkit"
    try:
        written = RENDERERS[args.figure](args.results_dir, out_base=out_base,
                                         formats=formats,
                                         reproducible=args.reproducible)
    except (ResultsError, OSError) as exc:
        print(f"plotkit error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for path in written:
        print(f"plotkit wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
