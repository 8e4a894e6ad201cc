#!/usr/bin/env python3
"""Run the Gaussian 3x3 collapse grid (d in {10,50,100}, n = d^2.5, R=400)."""

import argparse
import sys

from collapselab.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/fig1")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--reps", type=int, default=None)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()
    argv = ["collapse", "--preset", "fig1", "--out", args.out, "--threads", str(args.threads)]
    if args.seed is not None:
        argv += ["--seed", str(args.seed)]
    if args.reps is not None:
        argv += ["--reps", str(args.reps)]
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
