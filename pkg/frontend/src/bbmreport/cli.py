"""Command line wrapper: a spec file in, a report directory out."""
from __future__ import annotations

import argparse
import sys

from . import __version__
from .inputs import ReportError
from .report import ReportSpec, render_report

EXIT_OK = 0
EXIT_SPEC = 2
EXIT_OS = 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bbmreport",
        description="Render simulation diagnostics into a static HTML report.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("spec", help="report spec, a JSON file")
    parser.add_argument("--output-dir", default=None,
                        help="override the spec's output directory")
    parser.add_argument("--no-timestamp", action="store_true",
                        help="omit the generation timestamp for byte-stable output")
    args = parser.parse_args(argv)
    try:
        spec = ReportSpec.from_file(args.spec)
        if args.output_dir is not None or args.no_timestamp:
            from dataclasses import replace
            changes = {}
            if args.output_dir is not None:
                changes["output_dir"] = args.output_dir
            if args.no_timestamp:
                changes["timestamp"] = False
            spec = replace(spec, **changes)
        out = render_report(spec)
    except ReportError as exc:
        print(f"bbmreport: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except OSError as exc:
        print(f"bbmreport: {exc}", file=sys.stderr)
        return EXIT_OS
    print(f"report written to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
