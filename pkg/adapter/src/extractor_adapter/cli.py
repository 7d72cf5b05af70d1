"""Command-line entry point.

Exit codes mirror the primary tool: 0 success, 2 usage/format error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import sys

from .convert import AdapterError, FormatError, convert, read_column_map, read_video_meta


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="staog-adapter",
        description="Append an extractor dump to a feature file as one video record.",
    )
    parser.add_argument("--dump", required=True, help="extractor text dump (one video)")
    parser.add_argument("--meta", required=True,
                        help="JSON video metadata: id, label, width, height, num_frames")
    parser.add_argument("--map", required=True, dest="column_map",
                        help="JSON column layout of the dump")
    parser.add_argument("--out", required=True, help="feature file to append to")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        meta = read_video_meta(args.meta)
        mapping = read_column_map(args.column_map)
        stats = convert(args.dump, meta, mapping, args.out)
    except (FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    if stats["clamped"]:
        print(f"warning: clamped {stats['clamped']} out-of-bounds points", file=sys.stderr)
    print(f"id={meta.id} points={stats['points']} clamped={stats['clamped']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
