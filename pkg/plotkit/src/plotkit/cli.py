"""plotkit --spec FILE --out DIR: batch figure generation."""

from __future__ import annotations

import argparse
import os
import sys

from . import render, spec


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def main(argv=None):
    parser = _Parser(prog="plotkit",
                     description="Render figures from vsl schema-v1 CSVs")
    parser.add_argument("--spec", required=True, help="figure spec file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--quiet", action="store_true")
    try:
        args = parser.parse_args(argv)
        with open(args.spec, "r", encoding="utf-8") as fh:
            figures = spec.parse_spec(fh.read())
        os.makedirs(args.out, exist_ok=True)
        in_dir = os.path.dirname(os.path.abspath(args.spec))
        for fig_spec in figures:
            path = render.render(fig_spec, in_dir, args.out)
            if not args.quiet:
                print(f"wrote {path}")
        return 0
    except (UsageError, FileNotFoundError, spec.SpecError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
