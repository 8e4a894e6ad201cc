#!/usr/bin/env python3
"""Gaussian collapse-rate sweep: observed mean T against the closed-form rate.

Runs d in {100, 400, 1600} at fixed n (default 10^4), then writes rates.json
with per-cell observed/predicted values and the fitted log-log slope for the
rate-curve figure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from collapselab import asymptotics as asy
from collapselab.cli import main as cli_main
from collapselab.experiments import DEFAULT_SEED, exponent_scale_sigma_sq
from collapselab.models import NoiseKind

LABEL = "rate-sweep"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/rate-sweep")
    parser.add_argument("--dims", default="100,400,1600")
    parser.add_argument("--n", type=int, default=10_000)
    parser.add_argument("--reps", type=int, default=200)
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument(
        "--reuse", action="store_true", help="skip the simulation if the summary CSV exists"
    )
    args = parser.parse_args()
    dims = [int(v) for v in args.dims.split(",")]
    out = Path(args.out)
    summary_path = out / f"{LABEL}_summary.csv"

    if not (args.reuse and summary_path.exists()):
        out.mkdir(parents=True, exist_ok=True)
        cfg = {
            "kind": "collapse",
            "noise": "gaussian",
            "label": LABEL,
            "seed": args.seed,
            "reps": args.reps,
            "cells": [{"d": d, "n": args.n} for d in dims],
        }
        cfg_path = out / "config.json"
        cfg_path.write_text(json.dumps(cfg, indent=2) + "\n")
        code = cli_main(
            ["collapse", "--config", str(cfg_path), "--out", str(out),
             "--threads", str(args.threads)]
        )
        if code != 0:
            return code

    lines = summary_path.read_text().strip().split("\n")
    header = lines[0].split(",")
    cells = []
    for line in lines[1:]:
        row = dict(zip(header, line.split(",")))
        d, n = int(row["d"]), int(row["n"])
        mean_t = float(row["mean_t_observed"])
        sigma_sq = exponent_scale_sigma_sq(
            NoiseKind.GAUSSIAN_IID, float(row["mean_sigma_hat_sq"])
        )
        predicted = asy.gaussian_collapse_rate(n, d, sigma_sq)
        cells.append(
            {
                "d": d,
                "n": n,
                "mean_t_observed": mean_t,
                "predicted_rate": predicted,
                "ratio": mean_t / predicted if predicted else None,
            }
        )
    cells.sort(key=lambda c: c["d"])
    slope = None
    usable = [(c["d"], c["mean_t_observed"]) for c in cells if c["mean_t_observed"] > 0]
    if len(usable) >= 2:
        slope = float(np.polyfit(np.log([d for d, _ in usable]),
                                 np.log([t for _, t in usable]), 1)[0])
    doc = {"label": LABEL, "n": args.n, "cells": cells, "slope": slope}
    rates_path = out / "rates.json"
    rates_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"[out] {rates_path} (slope = {slope})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
