"""`espk-convert` command line: nmnist and shd subcommands.

Exit codes: 0 success, 1 runtime/format failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys

from .nmnist import MalformedAerError, convert_nmnist
from .shd import ShdFormatError, convert_shd


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="espk-convert",
        description="Convert public neuromorphic datasets to ESPK files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("nmnist", help="convert an N-MNIST split directory")
    p.add_argument("--src", required=True, help="split directory with digit subdirs")
    p.add_argument("--out", required=True, help="output ESPK path")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--on-error", choices=("abort", "skip"), default="abort",
                   help="malformed AER records: abort or skip with a count")
    p.set_defaults(func=lambda a: convert_nmnist(a.src, a.out, steps=a.steps,
                                                 on_error=a.on_error))

    p = sub.add_parser("shd", help="convert an SHD HDF5 file")
    p.add_argument("--src", required=True, help="HDF5 file with spikes/labels")
    p.add_argument("--out", required=True, help="output ESPK path")
    p.add_argument("--steps", type=int, default=100)
    p.set_defaults(func=lambda a: convert_shd(a.src, a.out, steps=a.steps))

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        manifest = args.func(args)
    except (MalformedAerError, ShdFormatError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(
        f"wrote {manifest.output}: {manifest.n_samples} samples, "
        f"{manifest.n_classes} classes, {manifest.channels} channels x "
        f"{manifest.steps} steps, {manifest.total_events} events "
        f"({manifest.skipped_records} records skipped)"
    )
    print(f"manifest: {manifest.output}.manifest.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
