"""Command-line surface: collapse grids, consistency runs, theory evaluation,
invariant checks, and manifest verification.

Exit codes: 0 ok, 1 validation error, 2 runtime failure, 3 partial run with
skipped cells.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import asymptotics, checks, experiments, io
from .experiments import DEFAULT_BUDGET, DEFAULT_SEED, ExperimentGrid
from .io import CollapseConfig, ConfigError, ConsistencyConfig, TheoryRequest

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--reps", type=int, default=None, help="replicates per cell")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--budget", type=int, default=None,
                   help="max per-replicate particle-elements n*d before a cell is skipped")
    p.add_argument("--threads", type=int, default=1,
                   help="worker count; results are identical for any value")
    p.add_argument("--format", choices=("csv", "json"), default="csv",
                   help="also emit JSON summaries when 'json'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="collapselab",
        description="Monte Carlo laboratory for particle-filter weight collapse",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_collapse = sub.add_parser("collapse", help="run a max-weight grid experiment")
    p_collapse.add_argument("--preset", choices=sorted(experiments.PRESETS))
    p_collapse.add_argument("--config", type=Path, help="JSON config document")
    p_collapse.add_argument("--full-reps", action="store_true",
                            help="disable the replicate shrink on huge cells")
    _add_common(p_collapse)

    p_cons = sub.add_parser("consistency", help="weighted-estimator consistency runs")
    p_cons.add_argument("--config", type=Path)
    p_cons.add_argument("--d", type=int, default=5)
    p_cons.add_argument("--n", type=str, default="1000,10000,100000",
                        help="comma-separated ensemble sizes")
    p_cons.add_argument("--h", type=str, default="indicator",
                        help="comma-separated bounded test function names")
    _add_common(p_cons)

    p_theory = sub.add_parser("theory", help="evaluate closed-form predictors")
    p_theory.add_argument("request", nargs="?",
                          choices=("rate", "expected-t", "cauchy", "average-rate",
                                   "posterior", "gumbel"))
    p_theory.add_argument("--config", type=Path)
    p_theory.add_argument("--n", type=int)
    p_theory.add_argument("--d", type=int)
    p_theory.add_argument("--sigma-sq", type=float)
    p_theory.add_argument("--sigma", type=float)
    p_theory.add_argument("--s1", type=float)
    p_theory.add_argument("--z0", type=float)
    p_theory.add_argument("--eps", type=float)
    p_theory.add_argument("--y", type=str, help="comma-separated observation vector")

    sub.add_parser("check", help="fast invariant suite")

    p_manifest = sub.add_parser("manifest", help="print and verify output digests")
    p_manifest.add_argument("--out", type=Path, default=Path("out"))

    return parser


def _cmd_collapse(args) -> int:
    if (args.preset is None) == (args.config is None):
        print("collapse: exactly one of --preset / --config is required", file=sys.stderr)
        return EXIT_CONFIG
    if args.config is not None:
        cfg = io.parse_config(args.config.read_text())
        if not isinstance(cfg, CollapseConfig):
            print("collapse: config kind is not 'collapse'", file=sys.stderr)
            return EXIT_CONFIG
        grid, budget, full_reps = cfg.grid, cfg.budget, cfg.full_reps
    else:
        grid = experiments.PRESETS[args.preset](args.seed if args.seed is not None else DEFAULT_SEED)
        budget, full_reps = DEFAULT_BUDGET, False
    if args.seed is not None and grid.master_seed != args.seed:
        grid = ExperimentGrid(grid.cells, grid.reps, grid.noise_kind, args.seed, grid.label)
    if args.reps is not None:
        grid = ExperimentGrid(grid.cells, args.reps, grid.noise_kind, grid.master_seed, grid.label)
    if args.budget is not None:
        budget = args.budget
    full_reps = full_reps or args.full_reps

    started = time.time()
    run = experiments.run_grid(
        grid,
        workers=args.threads,
        budget=budget,
        full_reps=full_reps,
        progress=lambda msg: print(f"[run] {msg}", flush=True),
    )
    config_echo = {
        "kind": "collapse",
        "label": grid.label,
        "noise": grid.noise_kind.value,
        "cells": [list(c) for c in grid.cells],
        "reps": grid.reps,
        "seed": grid.master_seed,
        "budget": budget,
        "full_reps": full_reps,
    }
    files = io.emit_grid_outputs(
        args.out, run, config_echo, started, json_summary=args.format == "json"
    )
    for cell in run.results:
        print(
            f"[done] d={cell.d} n={cell.n} reps={len(cell.records)} "
            f"mean_wmax={cell.summary.mean_wmax:.4f} median={cell.summary.median_wmax:.4f}"
        )
    for skip in run.skipped:
        print(f"[skip] d={skip.d} n={skip.n}: {skip.reason}")
    print(f"[out] {', '.join(str(f) for f in files)}")
    return EXIT_PARTIAL if run.skipped else EXIT_OK


def _cmd_consistency(args) -> int:
    if args.config is not None:
        cfg = io.parse_config(args.config.read_text())
        if not isinstance(cfg, ConsistencyConfig):
            print("consistency: config kind is not 'consistency'", file=sys.stderr)
            return EXIT_CONFIG
    else:
        cfg = ConsistencyConfig(
            d=args.d,
            n_list=tuple(int(v) for v in args.n.split(",")),
            h_names=tuple(args.h.split(",")),
            reps=args.reps if args.reps is not None else 100,
            master_seed=args.seed if args.seed is not None else DEFAULT_SEED,
        )
    started = time.time()
    results = experiments.run_consistency(
        cfg.d, cfg.n_list, cfg.h_names, cfg.reps, cfg.master_seed
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{cfg.label}_reps.csv"
    io.write_consistency_csv(csv_path, cfg.label, results)
    summary_path = out / f"{cfg.label}_summary.json"
    io.write_consistency_summary(summary_path, cfg.label, results)
    manifest = io.build_manifest(
        {
            "kind": "consistency",
            "d": cfg.d,
            "n_list": list(cfg.n_list),
            "h": list(cfg.h_names),
            "reps": cfg.reps,
            "seed": cfg.master_seed,
        },
        cfg.master_seed,
        out,
        [csv_path, summary_path],
        {},
        started,
        time.time(),
    )
    io.write_manifest(out, manifest)
    for res in results:
        for name, h in res.h_results.items():
            print(
                f"[done] d={res.d} n={res.n} h={name} "
                f"median_abs_error={np.median(h.abs_errors):.5f} "
                f"median_ks={np.median(res.resample_ks):.5f}"
            )
    return EXIT_OK


def _theory_payload(request: str, params: dict) -> dict:
    def need(*names):
        missing = [k for k in names if params.get(k) is None]
        if missing:
            raise ConfigError([f"theory {request}: missing {', '.join(missing)}"])

    if request == "rate":
        need("n", "d", "sigma_sq")
        return {
            "rate": asymptotics.gaussian_collapse_rate(params["n"], params["d"], params["sigma_sq"])
        }
    if request == "expected-t":
        need("n", "d", "sigma", "s1")
        return {
            "expected_t": asymptotics.expected_t_normal_closed_form(
                params["s1"], params["sigma"], params["d"], params["n"]
            )
        }
    if request == "cauchy":
        need("n", "d", "z0")
        return asdict(asymptotics.cauchy_predicted_t(params["n"], params["d"], params["z0"]))
    if request == "average-rate":
        need("n", "d", "eps")
        return asdict(asymptotics.cauchy_average_rate(params["n"], params["d"], params["eps"]))
    if request == "posterior":
        need("y")
        y = np.asarray(params["y"], dtype=float)
        post = asymptotics.limiting_posterior_params(y)
        return {"mean": post.mean.tolist(), "var": post.var, "clamped": post.clamped}
    if request == "gumbel":
        need("n")
        return asdict(asymptotics.gumbel_min_approx(params["n"]))
    raise ConfigError([f"unknown theory request {request!r}"])


def _cmd_theory(args) -> int:
    if args.config is not None:
        cfg = io.parse_config(args.config.read_text())
        if not isinstance(cfg, TheoryRequest):
            print("theory: config kind is not 'theory'", file=sys.stderr)
            return EXIT_CONFIG
        request, params = cfg.request, cfg.params
    else:
        if args.request is None:
            print("theory: a request name or --config is required", file=sys.stderr)
            return EXIT_CONFIG
        request = args.request
        params = {
            "n": args.n,
            "d": args.d,
            "sigma_sq": args.sigma_sq,
            "sigma": args.sigma,
            "s1": args.s1,
            "z0": args.z0,
            "eps": args.eps,
            "y": [float(v) for v in args.y.split(",")] if args.y else None,
        }
    payload = _theory_payload(request, params)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_check(_args) -> int:
    outcomes = checks.run_checks()
    for oc in outcomes:
        print(f"[{'PASS' if oc.passed else 'FAIL'}] {oc.name}: {oc.detail}")
    return EXIT_OK if all(oc.passed for oc in outcomes) else EXIT_RUNTIME


def _cmd_manifest(args) -> int:
    ok, status = io.verify_manifest(args.out)
    for rel, state in sorted(status.items()):
        print(f"[{state}] {rel}")
    print("[verified]" if ok else "[tampered]")
    return EXIT_OK if ok else EXIT_RUNTIME


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "collapse":
            return _cmd_collapse(args)
        if args.command == "consistency":
            return _cmd_consistency(args)
        if args.command == "theory":
            return _cmd_theory(args)
        if args.command == "check":
            return _cmd_check(args)
        if args.command == "manifest":
            return _cmd_manifest(args)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # pragma: no cover - defensive surface
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
