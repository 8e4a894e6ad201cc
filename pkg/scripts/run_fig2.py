#!/usr/bin/env python3
"""Run the Cauchy 3x3 collapse grids (d in {10,50,400}, n = d^2.5).

Both the iid-Cauchy and multivariate-Cauchy panels by default; huge cells
drop to 100 replicates unless --full-reps is given.
"""

import argparse
import sys

from collapselab.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--panel", choices=("iid", "mv", "both"), default="both")
    parser.add_argument("--out", default="out")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--reps", type=int, default=None)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--full-reps", action="store_true")
    args = parser.parse_args()

    panels = ("iid", "mv") if args.panel == "both" else (args.panel,)
    for panel in panels:
        preset = f"fig2-{panel}"
        argv = [
            "collapse", "--preset", preset,
            "--out", f"{args.out}/{preset}",
            "--threads", str(args.threads),
        ]
        if args.seed is not None:
            argv += ["--seed", str(args.seed)]
        if args.reps is not None:
            argv += ["--reps", str(args.reps)]
        if args.full_reps:
            argv += ["--full-reps"]
        code = cli_main(argv)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
