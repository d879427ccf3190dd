"""Command line for the one-shot export: ``bsccm-export --data <dir> --out <dir>``."""

from __future__ import annotations

import argparse
import sys

from .exporter import BsccmTinySource, ExportError, export


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bsccm-export",
        description="Convert BSCCM-tiny into the neutral binary dataset format",
    )
    parser.add_argument("--data", required=True, help="downloaded BSCCM-tiny directory")
    parser.add_argument("--out", required=True, help="output dataset directory")
    args = parser.parse_args(argv)
    try:
        source = BsccmTinySource.open(args.data)
        manifest = export(source, args.out)
    except ExportError as exc:
        print(f"export failed: {exc}", file=sys.stderr)
        return 1
    print(
        f"exported {manifest.n_cells} cells x {len(manifest.channels)} channels; "
        f"labeled subset {len(manifest.labels)} ({manifest.histogram})"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
