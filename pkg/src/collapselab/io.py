"""Config parsing, CSV/JSON emission, histograms, and run manifests.

All data files are byte-stable for a fixed config and seed: floats are
serialized with 17 significant digits (value round-trip exact) and no
timestamps enter the data files.  The manifest records a sha256 digest of
every emitted file so reruns and tampering are detectable.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .experiments import (
    DEFAULT_BUDGET,
    ConsistencyResult,
    ExperimentGrid,
    GridRunResult,
    PRESETS,
    bounded_function,
)
from .models import NoiseKind

TOOL_VERSION = "0.1.0"

REP_CSV_HEADER = "experiment,kernel,d,n,rep,seed,w_max,ess,entropy,t_observed,s_min,z0"
SUMMARY_CSV_HEADER = (
    "experiment,kernel,d,n,reps,failed,mean_wmax,median_wmax,"
    "q05,q25,q75,q95,mean_t_observed,predicted_rate,mean_sigma_hat_sq"
)
HIST_CSV_HEADER = "experiment,kernel,d,n,bin_left,bin_right,count,mean_wmax"
CONSISTENCY_CSV_HEADER = (
    "experiment,d,n,rep,seed,h,estimate,exact,abs_error,resample_ks"
)


class ConfigError(ValueError):
    """Invalid run configuration; ``violations`` lists every problem found."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


def fmt(x) -> str:
    """17-significant-digit float serialization; empty string for None."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# config documents


@dataclass(frozen=True)
class CollapseConfig:
    grid: ExperimentGrid
    budget: int = DEFAULT_BUDGET
    full_reps: bool = False


@dataclass(frozen=True)
class ConsistencyConfig:
    d: int
    n_list: tuple[int, ...]
    h_names: tuple[str, ...]
    reps: int
    master_seed: int
    label: str = "consistency"


@dataclass(frozen=True)
class TheoryRequest:
    request: str
    params: dict


_COLLAPSE_KEYS = {"kind", "preset", "noise", "cells", "reps", "seed", "budget", "label", "full_reps"}
_CONSISTENCY_KEYS = {"kind", "d", "n_list", "h", "reps", "seed", "label"}
_THEORY_KEYS = {"kind", "request", "params"}
_NOISE_NAMES = {k.value for k in NoiseKind}
_THEORY_REQUESTS = {"rate", "expected-t", "cauchy", "average-rate", "posterior", "gumbel"}


def _positive_int(doc, key, violations, default=None, minimum=1):
    val = doc.get(key, default)
    if val is None:
        violations.append(f"missing required key {key!r}")
        return None
    if not isinstance(val, int) or isinstance(val, bool) or val < minimum:
        violations.append(f"{key!r} must be an integer >= {minimum}, got {val!r}")
        return None
    return val


def parse_config(text: str):
    """Parse and validate a JSON run config; reports every violation at once.

    Returns a CollapseConfig, ConsistencyConfig, or TheoryRequest.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"not valid JSON: {exc}"]) from exc
    if not isinstance(doc, dict):
        raise ConfigError(["config must be a JSON object"])
    violations: list[str] = []
    kind = doc.get("kind")
    if kind not in {"collapse", "consistency", "theory"}:
        raise ConfigError([f"'kind' must be one of collapse/consistency/theory, got {kind!r}"])

    if kind == "collapse":
        return _parse_collapse(doc, violations)
    if kind == "consistency":
        return _parse_consistency(doc, violations)
    return _parse_theory(doc, violations)


def _parse_collapse(doc, violations):
    unknown = set(doc) - _COLLAPSE_KEYS
    if unknown:
        violations.append(f"unknown keys: {sorted(unknown)}")
    seed = _positive_int(doc, "seed", violations, minimum=0)
    preset = doc.get("preset")
    budget = doc.get("budget", DEFAULT_BUDGET)
    if not isinstance(budget, int) or isinstance(budget, bool) or budget < 1:
        violations.append(f"'budget' must be a positive integer, got {budget!r}")
    full_reps = doc.get("full_reps", False)
    if not isinstance(full_reps, bool):
        violations.append("'full_reps' must be a boolean")

    if preset is not None:
        if preset not in PRESETS:
            violations.append(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")
        for key in ("noise", "cells"):
            if key in doc:
                violations.append(f"{key!r} may not be combined with a preset")
        if violations:
            raise ConfigError(violations)
        grid = PRESETS[preset](seed)
        reps = doc.get("reps")
        if reps is not None:
            if not isinstance(reps, int) or isinstance(reps, bool) or reps < 1:
                raise ConfigError([f"'reps' must be a positive integer, got {reps!r}"])
            grid = ExperimentGrid(
                cells=grid.cells,
                reps=reps,
                noise_kind=grid.noise_kind,
                master_seed=grid.master_seed,
                label=grid.label,
            )
        return CollapseConfig(grid=grid, budget=budget, full_reps=full_reps)

    noise = doc.get("noise")
    if noise not in _NOISE_NAMES:
        violations.append(f"'noise' must be one of {sorted(_NOISE_NAMES)}, got {noise!r}")
    reps = _positive_int(doc, "reps", violations, default=400)
    cells_doc = doc.get("cells")
    cells: list[tuple[int, int]] = []
    if not isinstance(cells_doc, list) or not cells_doc:
        violations.append("'cells' must be a non-empty list of {d, n} objects")
    else:
        for i, cell in enumerate(cells_doc):
            if not isinstance(cell, dict) or set(cell) != {"d", "n"}:
                violations.append(f"cells[{i}] must be an object with exactly keys d, n")
                continue
            good = True
            for key in ("d", "n"):
                v = cell[key]
                if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                    violations.append(f"cells[{i}].{key} must be a positive integer, got {v!r}")
                    good = False
            if good:
                cells.append((cell["d"], cell["n"]))
        if len(set(cells)) != len(cells):
            violations.append("cells must be unique")
    label = doc.get("label", "collapse")
    if not isinstance(label, str) or not label:
        violations.append("'label' must be a non-empty string")
    if violations:
        raise ConfigError(violations)
    grid = ExperimentGrid(
        cells=tuple(cells), reps=reps, noise_kind=NoiseKind(noise), master_seed=seed, label=label
    )
    return CollapseConfig(grid=grid, budget=budget, full_reps=full_reps)


def _parse_consistency(doc, violations):
    unknown = set(doc) - _CONSISTENCY_KEYS
    if unknown:
        violations.append(f"unknown keys: {sorted(unknown)}")
    d = _positive_int(doc, "d", violations)
    reps = _positive_int(doc, "reps", violations, default=100)
    seed = _positive_int(doc, "seed", violations, minimum=0)
    n_list = doc.get("n_list")
    if (
        not isinstance(n_list, list)
        or not n_list
        or any(not isinstance(n, int) or isinstance(n, bool) or n < 1 for n in n_list)
    ):
        violations.append("'n_list' must be a non-empty list of positive integers")
    h_names = doc.get("h", ["indicator"])
    if not isinstance(h_names, list) or not h_names:
        violations.append("'h' must be a non-empty list of names")
    else:
        for name in h_names:
            try:
                bounded_function(name)
            except KeyError as exc:
                violations.append(str(exc))
    label = doc.get("label", "consistency")
    if violations:
        raise ConfigError(violations)
    return ConsistencyConfig(
        d=d,
        n_list=tuple(n_list),
        h_names=tuple(h_names),
        reps=reps,
        master_seed=seed,
        label=label,
    )


def _parse_theory(doc, violations):
    unknown = set(doc) - _THEORY_KEYS
    if unknown:
        violations.append(f"unknown keys: {sorted(unknown)}")
    request = doc.get("request")
    if request not in _THEORY_REQUESTS:
        violations.append(f"'request' must be one of {sorted(_THEORY_REQUESTS)}, got {request!r}")
    params = doc.get("params", {})
    if not isinstance(params, dict):
        violations.append("'params' must be an object")
    if violations:
        raise ConfigError(violations)
    return TheoryRequest(request=request, params=params)


# ---------------------------------------------------------------------------
# histogram


@dataclass(frozen=True)
class HistogramResult:
    bin_left: np.ndarray
    bin_right: np.ndarray
    counts: np.ndarray
    mean_marker: float


def histogram(values, bins: int = 20) -> HistogramResult:
    """Fixed-width bins on [0, 1]; only the last bin is closed on the right."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("no values to bin")
    if np.any(values < 0) or np.any(values > 1):
        raise ValueError("all values must lie in [0, 1]")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    return HistogramResult(
        bin_left=edges[:-1],
        bin_right=edges[1:],
        counts=counts,
        mean_marker=float(values.mean()),
    )


# ---------------------------------------------------------------------------
# CSV / JSON emission


def write_reps_csv(path: Path, label: str, results) -> None:
    lines = [REP_CSV_HEADER]
    for cell in results:
        kernel = cell.noise_kind.value
        for r in cell.records:
            lines.append(
                ",".join(
                    [
                        label,
                        kernel,
                        str(cell.d),
                        str(cell.n),
                        str(r.rep),
                        str(r.seed),
                        fmt(r.w_max),
                        fmt(r.ess),
                        fmt(r.entropy),
                        fmt(r.t_observed),
                        fmt(r.s_min),
                        fmt(r.z0),
                    ]
                )
            )
    path.write_text("\n".join(lines) + "\n")


def write_summary_csv(path: Path, label: str, results) -> None:
    lines = [SUMMARY_CSV_HEADER]
    for cell in results:
        s = cell.summary
        lines.append(
            ",".join(
                [
                    label,
                    cell.noise_kind.value,
                    str(cell.d),
                    str(cell.n),
                    str(len(cell.records)),
                    str(cell.failed),
                    fmt(s.mean_wmax),
                    fmt(s.median_wmax),
                    fmt(s.q05),
                    fmt(s.q25),
                    fmt(s.q75),
                    fmt(s.q95),
                    fmt(s.mean_t_observed),
                    fmt(s.predicted_rate),
                    fmt(s.mean_sigma_hat_sq),
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n")


def write_hist_csv(path: Path, label: str, results, bins: int = 20) -> None:
    lines = [HIST_CSV_HEADER]
    for cell in results:
        hist = histogram(cell.w_max_values, bins=bins)
        for left, right, count in zip(hist.bin_left, hist.bin_right, hist.counts):
            lines.append(
                ",".join(
                    [
                        label,
                        cell.noise_kind.value,
                        str(cell.d),
                        str(cell.n),
                        fmt(left),
                        fmt(right),
                        str(int(count)),
                        fmt(hist.mean_marker),
                    ]
                )
            )
    path.write_text("\n".join(lines) + "\n")


def write_consistency_csv(path: Path, label: str, results: list[ConsistencyResult]) -> None:
    lines = [CONSISTENCY_CSV_HEADER]
    for res in results:
        for name, h in res.h_results.items():
            for rep in range(len(res.seeds)):
                lines.append(
                    ",".join(
                        [
                            label,
                            str(res.d),
                            str(res.n),
                            str(rep),
                            str(int(res.seeds[rep])),
                            name,
                            fmt(h.estimates[rep]),
                            fmt(h.exacts[rep]),
                            fmt(h.abs_errors[rep]),
                            fmt(res.resample_ks[rep]),
                        ]
                    )
                )
    path.write_text("\n".join(lines) + "\n")


def write_consistency_summary(path: Path, label: str, results: list[ConsistencyResult]) -> None:
    doc = {"experiment": label, "cells": []}
    for res in results:
        entry = {"d": res.d, "n": res.n, "reps": int(len(res.seeds)), "h": {}}
        for name, h in res.h_results.items():
            entry["h"][name] = {
                "median_abs_error": float(np.median(h.abs_errors)),
                "mean_abs_error": float(np.mean(h.abs_errors)),
                "variance_bound": h.variance_bound if math.isfinite(h.variance_bound) else None,
                "log10_variance_bound": h.log10_variance_bound,
                "exact_is_mc": h.exact_is_mc,
            }
        entry["median_resample_ks"] = float(np.median(res.resample_ks))
        doc["cells"].append(entry)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# manifest


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(
    config_echo: dict,
    master_seed: int,
    out_dir: Path,
    files: list[Path],
    statuses: dict,
    started: float,
    finished: float,
) -> dict:
    return {
        "tool_version": TOOL_VERSION,
        "config": config_echo,
        "master_seed": master_seed,
        "started_unix": started,
        "finished_unix": finished,
        "cells": statuses,
        "files": {
            str(p.relative_to(out_dir)): sha256_file(p) for p in sorted(files)
        },
    }


def write_manifest(out_dir: Path, manifest: dict) -> Path:
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def verify_manifest(out_dir: Path) -> tuple[bool, dict[str, str]]:
    """Recompute digests of the files a manifest lists.

    Returns (ok, {relative path: 'ok' | 'missing' | 'modified'}).
    """
    manifest_path = Path(out_dir) / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {out_dir}")
    manifest = json.loads(manifest_path.read_text())
    status: dict[str, str] = {}
    ok = True
    for rel, digest in manifest.get("files", {}).items():
        p = Path(out_dir) / rel
        if not p.exists():
            status[rel] = "missing"
            ok = False
        elif sha256_file(p) != digest:
            status[rel] = "modified"
            ok = False
        else:
            status[rel] = "ok"
    return ok, status


def write_summary_json(path: Path, run: GridRunResult) -> None:
    doc = []
    for c in run.results:
        s = c.summary
        doc.append(
            {
                "d": c.d,
                "n": c.n,
                "reps": len(c.records),
                "failed": c.failed,
                "mean_wmax": s.mean_wmax,
                "median_wmax": s.median_wmax,
                "q05": s.q05,
                "q25": s.q25,
                "q75": s.q75,
                "q95": s.q95,
                "mean_t_observed": s.mean_t_observed,
                "predicted_rate": s.predicted_rate,
                "mean_sigma_hat_sq": s.mean_sigma_hat_sq,
            }
        )
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def emit_grid_outputs(
    out_dir: Path,
    run: GridRunResult,
    config_echo: dict,
    started: float,
    json_summary: bool = False,
) -> list[Path]:
    """Write the per-rep, summary, and histogram CSVs plus the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    label = run.grid.label
    files = []
    for suffix, writer in (
        ("reps", write_reps_csv),
        ("summary", write_summary_csv),
        ("hist", write_hist_csv),
    ):
        path = out_dir / f"{label}_{suffix}.csv"
        writer(path, label, run.results)
        files.append(path)
    if json_summary:
        path = out_dir / f"{label}_summary.json"
        write_summary_json(path, run)
        files.append(path)
    statuses = {
        "done": [[c.d, c.n] for c in run.results],
        "skipped": [[s.d, s.n, s.reason] for s in run.skipped],
        "failed_reps": {f"d{c.d}_n{c.n}": c.failed for c in run.results if c.failed},
    }
    manifest = build_manifest(
        config_echo, run.grid.master_seed, out_dir, files, statuses, started, time.time()
    )
    write_manifest(out_dir, manifest)
    return files
