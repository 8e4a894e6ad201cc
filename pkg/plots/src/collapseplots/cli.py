"""Command line for figure rendering: histogram grids and rate curves."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import FigureSpec, render_histogram_grid, render_rate_curves


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="collapseplots", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_grid = sub.add_parser("grid", help="histogram grid from a *_hist.csv")
    p_grid.add_argument("hist_csv", type=Path)
    p_grid.add_argument("--out", type=Path, required=True)
    p_grid.add_argument("--title", default="")
    p_grid.add_argument("--sparse", action="store_true")

    p_rates = sub.add_parser("rates", help="rate curves from a rates.json")
    p_rates.add_argument("rates_json", type=Path)
    p_rates.add_argument("--out", type=Path, required=True)
    p_rates.add_argument("--title", default="")

    args = parser.parse_args(argv)
    try:
        if args.command == "grid":
            out = render_histogram_grid(
                FigureSpec(
                    hist_csv=args.hist_csv, out_path=args.out,
                    title=args.title, sparse=args.sparse,
                )
            )
        else:
            out = render_rate_curves(args.rates_json, args.out, title=args.title)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"[out] {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
