"""Replicated collapse-grid experiments and consistency/resampling runs.

Replicates are seeded independently through a splitmix-style derivation from
(master_seed, cell_index, rep_index), so every record can be regenerated in
isolation and results are identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr
from scipy.stats import kstest, norm

from . import asymptotics, weights
from .models import (
    LOG_PI,
    Ensemble,
    ModelSpec,
    NoiseKind,
    psi_cauchy,
    sample_observation,
    sample_prior,
)
from .weights import DegenerateLikelihoodError, NormalizedWeights

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# replicate shrink for huge cells: one replicate of n*d elements past this
# threshold caps the default replicate count (full runs behind full_reps)
SHRINK_ELEMENTS = 10**8
SHRUNK_REPS = 100

DEFAULT_BUDGET = 2 * 10**9
DEFAULT_SEED = 20260809

_STREAM_COLLAPSE = 0
_STREAM_CONSISTENCY = 1

_BLOCK_ELEMENTS = 1 << 22


def _splitmix64(state: int) -> int:
    state = (state + _GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_rep_seed(master_seed: int, cell_index: int, rep_index: int, stream: int = 0) -> int:
    """Per-replicate seed, recorded in every CSV row."""
    h = _splitmix64(master_seed & _MASK)
    h = _splitmix64(h ^ ((stream + 1) * _GOLDEN & _MASK))
    h = _splitmix64(h ^ ((cell_index + 1) * _GOLDEN & _MASK))
    h = _splitmix64(h ^ ((rep_index + 1) * _GOLDEN & _MASK))
    return h


@dataclass(frozen=True)
class RepRecord:
    rep: int
    seed: int
    w_max: float
    ess: float
    entropy: float
    t_observed: float
    s_min: float | None
    z0: float | None
    # plug-in score variance for theory comparisons; kept in memory and in
    # the summary, not in the per-rep CSV schema
    sigma_hat_sq: float | None


@dataclass(frozen=True)
class CellSummary:
    mean_wmax: float
    median_wmax: float
    q05: float
    q25: float
    q75: float
    q95: float
    mean_t_observed: float
    predicted_rate: float | None
    mean_sigma_hat_sq: float | None


@dataclass(frozen=True)
class CellResult:
    noise_kind: NoiseKind
    d: int
    n: int
    reps_requested: int
    records: list[RepRecord]
    failed: int
    summary: CellSummary

    @property
    def w_max_values(self) -> np.ndarray:
        return np.array([r.w_max for r in self.records])


@dataclass(frozen=True)
class ExperimentGrid:
    cells: tuple[tuple[int, int], ...]
    reps: int
    noise_kind: NoiseKind
    master_seed: int
    label: str

    def __post_init__(self):
        cells = tuple((int(d), int(n)) for d, n in self.cells)
        if len(set(cells)) != len(cells):
            raise ValueError("cell ids must be unique")
        if any(d < 1 or n < 1 for d, n in cells):
            raise ValueError("all cells need d >= 1 and n >= 1")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "noise_kind", NoiseKind(self.noise_kind))


FIG1_DIMS = (10, 50, 100)
FIG1_SIZES = (316, 17676, 100000)
FIG2_DIMS = (10, 50, 400)
FIG2_SIZES = (316, 17676, 3200000)


def _cross(dims, sizes):
    return tuple((d, n) for d in dims for n in sizes)


def fig1_grid(master_seed: int = DEFAULT_SEED) -> ExperimentGrid:
    return ExperimentGrid(
        cells=_cross(FIG1_DIMS, FIG1_SIZES),
        reps=400,
        noise_kind=NoiseKind.GAUSSIAN_IID,
        master_seed=master_seed,
        label="fig1",
    )


def fig2_iid_grid(master_seed: int = DEFAULT_SEED) -> ExperimentGrid:
    return ExperimentGrid(
        cells=_cross(FIG2_DIMS, FIG2_SIZES),
        reps=400,
        noise_kind=NoiseKind.CAUCHY_IID,
        master_seed=master_seed,
        label="fig2-iid",
    )


def fig2_mv_grid(master_seed: int = DEFAULT_SEED) -> ExperimentGrid:
    return ExperimentGrid(
        cells=_cross(FIG2_DIMS, FIG2_SIZES),
        reps=400,
        noise_kind=NoiseKind.CAUCHY_MULTIVARIATE,
        master_seed=master_seed,
        label="fig2-mv",
    )


PRESETS: dict[str, Callable[[int], ExperimentGrid]] = {
    "fig1": fig1_grid,
    "fig2-iid": fig2_iid_grid,
    "fig2-mv": fig2_mv_grid,
}


def effective_reps(d: int, n: int, reps: int, full_reps: bool = False) -> int:
    if full_reps:
        return reps
    return min(reps, SHRUNK_REPS) if n * d >= SHRINK_ELEMENTS else reps


def _run_collapse_rep(noise_kind: NoiseKind, d: int, n: int, rep: int, seed: int) -> RepRecord | None:
    """One replicate: draw data, stream the ensemble, reduce to diagnostics.

    Particle blocks continue the same generator stream as a single
    sample_prior call, so records regenerate exactly from their seed.
    Returns None for a degenerate (all -inf) replicate.
    """
    rng = np.random.default_rng(seed)
    model = ModelSpec(d=d, noise_kind=noise_kind)
    obs = sample_observation(model, rng)
    y = obs.y

    logw = np.empty(n)
    rows = max(1, _BLOCK_ELEMENTS // d)
    buf = np.empty((min(rows, n), d))
    r2_min = math.inf
    start = 0
    while start < n:
        stop = min(start + rows, n)
        block = buf[: stop - start]
        rng.standard_normal(out=block)
        block -= y
        np.multiply(block, block, out=block)
        if noise_kind is NoiseKind.CAUCHY_IID:
            np.log1p(block, out=block)
            logw[start:stop] = block.sum(axis=1)
            logw[start:stop] *= -1.0
            logw[start:stop] -= d * LOG_PI
        else:
            r2 = block.sum(axis=1)
            r2_min = min(r2_min, float(r2.min()))
            if noise_kind is NoiseKind.GAUSSIAN_IID:
                logw[start:stop] = -0.5 * r2
            else:
                logw[start:stop] = -0.5 * (d + 1) * np.log1p(r2)
        start = stop

    try:
        nw = weights.normalize(logw)
    except DegenerateLikelihoodError:
        return None
    diag = weights.diagnostics(nw)

    s_min = None
    sigma_hat_sq = None
    if noise_kind is NoiseKind.GAUSSIAN_IID:
        # scale^2 = 2 sum(1 + 2 y^2) = d * sigma_d'^2
        scale = math.sqrt(2.0 * np.sum(1.0 + 2.0 * y * y))
        location = float(np.sum(1.0 + y * y))
        s_min = (r2_min - location) / scale
        sigma_hat_sq = scale * scale / d
    elif noise_kind is NoiseKind.CAUCHY_IID:
        mu_y, s2_y = asymptotics.batch_kernel_moments(psi_cauchy, y)
        b = math.sqrt(float(s2_y.sum()))
        s_min = (float(mu_y.sum()) - (nw.log_norm + math.log(nw.max_weight))) / b
        sigma_hat_sq = float(s2_y.mean())
    else:
        y_norm_sq = float(y @ y)
        s_min = (r2_min - y_norm_sq - d) / (1.0 + y_norm_sq + d)

    return RepRecord(
        rep=rep,
        seed=seed,
        w_max=diag.max_weight,
        ess=diag.ess,
        entropy=diag.entropy,
        t_observed=diag.t_observed,
        s_min=s_min,
        z0=obs.z0,
        sigma_hat_sq=sigma_hat_sq,
    )


def _collapse_worker(args):
    return _run_collapse_rep(*args)


def exponent_scale_sigma_sq(noise_kind: NoiseKind, sigma_hat_sq: float) -> float:
    """Convert a recorded plug-in variance to the weight-exponent scale.

    The collapse rate applies to T built from the log-weight exponent.  For
    the Gaussian model the exponent is half the standardized squared-residual
    scale (log w = -(sigma_d' sqrt(d')/2) S + const), so the recorded
    sigma_d'^2 enters the rate divided by 4; the iid-kernel plug-in already
    is the exponent variance.
    """
    if noise_kind is NoiseKind.GAUSSIAN_IID:
        return sigma_hat_sq / 4.0
    return sigma_hat_sq


def _summarize_cell(noise_kind: NoiseKind, d: int, n: int, records: list[RepRecord]) -> CellSummary:
    # sorted reductions keep summaries bit-identical under record permutation
    w = np.sort([r.w_max for r in records])
    t = np.sort([r.t_observed for r in records])
    q05, q25, q75, q95 = np.quantile(w, [0.05, 0.25, 0.75, 0.95])
    mean_shs = None
    predicted = None
    if noise_kind is NoiseKind.CAUCHY_MULTIVARIATE:
        if n >= 2:
            preds = [asymptotics.cauchy_predicted_t(n, d, r.z0).predicted_t for r in records]
            predicted = float(np.mean(np.sort(preds)))
    else:
        shs = [r.sigma_hat_sq for r in records if r.sigma_hat_sq is not None]
        if shs:
            mean_shs = float(np.mean(np.sort(shs)))
            if n >= 2:
                predicted = asymptotics.gaussian_collapse_rate(
                    n, d, exponent_scale_sigma_sq(noise_kind, mean_shs)
                )
    return CellSummary(
        mean_wmax=float(w.mean()),
        median_wmax=float(np.median(w)),
        q05=float(q05),
        q25=float(q25),
        q75=float(q75),
        q95=float(q95),
        mean_t_observed=float(t.mean()),
        predicted_rate=predicted,
        mean_sigma_hat_sq=mean_shs,
    )


def run_collapse_cell(
    noise_kind,
    d: int,
    n: int,
    reps: int,
    master_seed: int,
    cell_index: int = 0,
    workers: int = 1,
) -> CellResult:
    """Replicated max-weight draws for one (d, n) grid cell.

    Degenerate replicates are counted in ``failed`` and excluded from the
    summary.  Results are identical for any ``workers`` value.
    """
    noise_kind = NoiseKind(noise_kind)
    if d < 1 or n < 1 or reps < 1:
        raise ValueError("need d >= 1, n >= 1, reps >= 1")
    args = [
        (noise_kind, d, n, rep, derive_rep_seed(master_seed, cell_index, rep, _STREAM_COLLAPSE))
        for rep in range(reps)
    ]
    if workers > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_collapse_worker, args, chunksize=max(1, reps // (8 * workers))))
    else:
        out = [_run_collapse_rep(*a) for a in args]
    records = [r for r in out if r is not None]
    failed = sum(1 for r in out if r is None)
    if not records:
        raise RuntimeError(f"every replicate of cell (d={d}, n={n}) was degenerate")
    summary = _summarize_cell(noise_kind, d, n, records)
    return CellResult(
        noise_kind=noise_kind,
        d=d,
        n=n,
        reps_requested=reps,
        records=records,
        failed=failed,
        summary=summary,
    )


@dataclass(frozen=True)
class SkippedCell:
    d: int
    n: int
    reason: str


@dataclass(frozen=True)
class GridRunResult:
    grid: ExperimentGrid
    results: list[CellResult]
    skipped: list[SkippedCell]


def run_grid(
    grid: ExperimentGrid,
    workers: int = 1,
    budget: int = DEFAULT_BUDGET,
    full_reps: bool = False,
    progress: Callable[[str], None] | None = None,
) -> GridRunResult:
    """Run all cells of a grid, skipping any whose per-replicate element
    count n*d exceeds the budget."""
    results: list[CellResult] = []
    skipped: list[SkippedCell] = []
    for idx, (d, n) in enumerate(grid.cells):
        if n * d > budget:
            skipped.append(
                SkippedCell(d=d, n=n, reason=f"n*d = {n * d} exceeds budget {budget}")
            )
            continue
        reps = effective_reps(d, n, grid.reps, full_reps)
        if progress:
            progress(f"cell d={d} n={n} reps={reps}")
        results.append(
            run_collapse_cell(
                grid.noise_kind, d, n, reps, grid.master_seed, cell_index=idx, workers=workers
            )
        )
    return GridRunResult(grid=grid, results=results, skipped=skipped)


# ---------------------------------------------------------------------------
# theory comparison


@dataclass(frozen=True)
class CellComparison:
    d: int
    n: int
    mean_t_observed: float
    predicted_rate: float
    ratio: float
    fully_collapsed: bool


@dataclass(frozen=True)
class TheoryComparison:
    cells: list[CellComparison]
    slope: float | None


def compare_theory(cells, sigma_sq: float | None = None) -> TheoryComparison:
    """Observed mean T against the closed-form collapse-rate predictors.

    Gaussian / iid cells compare against sqrt(2 log n / (sigma^2 d)) with
    sigma^2 supplied or the recorded plug-in averaged over replicates;
    multivariate-Cauchy cells average the z0-conditional predictor over
    replicates.  With two or more usable cells the log-log slope of mean T
    against d is fitted as well.
    """
    if isinstance(cells, CellResult):
        cells = [cells]
    if not cells:
        raise ValueError("no cells to compare")
    rows: list[CellComparison] = []
    for cell in cells:
        if len(cell.records) < 50:
            raise ValueError(
                f"cell (d={cell.d}, n={cell.n}) has {len(cell.records)} successful reps; need >= 50"
            )
        mean_t = cell.summary.mean_t_observed
        if cell.noise_kind is NoiseKind.CAUCHY_MULTIVARIATE:
            predicted = float(
                np.mean(
                    [
                        asymptotics.cauchy_predicted_t(cell.n, cell.d, r.z0).predicted_t
                        for r in cell.records
                    ]
                )
            )
        else:
            s2 = sigma_sq
            if s2 is None:
                s2 = cell.summary.mean_sigma_hat_sq
            if s2 is None:
                raise ValueError("sigma_sq required for this cell (no recorded plug-in)")
            predicted = asymptotics.gaussian_collapse_rate(
                cell.n, cell.d, exponent_scale_sigma_sq(cell.noise_kind, s2)
            )
        collapsed = mean_t == 0.0
        rows.append(
            CellComparison(
                d=cell.d,
                n=cell.n,
                mean_t_observed=mean_t,
                predicted_rate=predicted,
                ratio=0.0 if collapsed else mean_t / predicted,
                fully_collapsed=collapsed,
            )
        )
    slope = None
    usable = [(r.d, r.mean_t_observed) for r in rows if not r.fully_collapsed]
    if len({d for d, _ in usable}) >= 2:
        ds = np.log([d for d, _ in usable])
        ts = np.log([t for _, t in usable])
        slope = float(np.polyfit(ds, ts, 1)[0])
    return TheoryComparison(cells=rows, slope=slope)


# ---------------------------------------------------------------------------
# consistency experiments (super-exponential ensemble regime)


def resample(w: NormalizedWeights, ensemble: Ensemble, m: int, rng: np.random.Generator) -> Ensemble:
    """m multinomial draws (with replacement) from the weighted ensemble."""
    if m < 1:
        raise ValueError("m must be >= 1")
    idx = rng.choice(ensemble.n, size=m, replace=True, p=w.w)
    return Ensemble(ensemble.particles[idx])


@dataclass(frozen=True)
class BoundedFunction:
    """A named bounded test function with its exact posterior expectation.

    ``exact`` maps the observed data vector to the expectation under the
    closed-form posterior N(y0/2, I/2); when None, a labeled Monte Carlo
    oracle stands in.
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    bound: float
    exact: Callable[[np.ndarray], float] | None = None


_H_REGISTRY: dict[str, BoundedFunction] = {}


def register_bounded_function(h: BoundedFunction) -> None:
    if not (math.isfinite(h.bound) and h.bound > 0):
        raise ValueError(f"test function {h.name!r} must declare a finite bound")
    _H_REGISTRY[h.name] = h


def bounded_function(name: str) -> BoundedFunction:
    try:
        return _H_REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown test function {name!r}; known: {sorted(_H_REGISTRY)}") from None


def _exact_indicator(y0: np.ndarray) -> float:
    # P(X_1 <= 0) under N(y0/2, 1/2)
    return float(ndtr(-y0[0] / math.sqrt(2.0)))


def _exact_clip(y0: np.ndarray) -> float:
    m = y0[0] / 2.0
    s = math.sqrt(0.5)
    alpha = (-1.0 - m) / s
    beta = (1.0 - m) / s
    phi_a, phi_b = norm.pdf(alpha), norm.pdf(beta)
    cdf_a, cdf_b = ndtr(alpha), ndtr(beta)
    return float(-cdf_a + (1.0 - cdf_b) + m * (cdf_b - cdf_a) + s * (phi_a - phi_b))


register_bounded_function(
    BoundedFunction("one", lambda x: np.ones(x.shape[0]), 1.0, lambda y0: 1.0)
)
register_bounded_function(
    BoundedFunction(
        "indicator", lambda x: (x[:, 0] <= 0).astype(float), 1.0, _exact_indicator
    )
)
register_bounded_function(
    BoundedFunction("clip", lambda x: np.clip(x[:, 0], -1.0, 1.0), 1.0, _exact_clip)
)


def variance_bound(n: int, d: int, bound: float) -> tuple[float, float]:
    """(value, log10 value) of the consistency variance bound M^2 (4 sqrt 3)^d / n."""
    log10 = 2.0 * math.log10(bound) - math.log10(n) + d * math.log10(4.0 * math.sqrt(3.0))
    value = 10.0**log10 if log10 < 300 else math.inf
    return value, log10


def _mc_exact(h: BoundedFunction, y0: np.ndarray, seed: int, n_mc: int = 10**7) -> float:
    rng = np.random.default_rng(seed)
    d = y0.shape[0]
    total = 0.0
    done = 0
    block = max(1, min(n_mc, 4_000_000 // d))
    while done < n_mc:
        b = min(block, n_mc - done)
        x = rng.standard_normal((b, d)) * math.sqrt(0.5) + y0 / 2.0
        total += float(h.fn(x).sum())
        done += b
    return total / n_mc


@dataclass(frozen=True)
class HFuncResult:
    name: str
    estimates: np.ndarray
    exacts: np.ndarray
    abs_errors: np.ndarray
    variance_bound: float
    log10_variance_bound: float
    exact_is_mc: bool


@dataclass(frozen=True)
class ConsistencyResult:
    d: int
    n: int
    seeds: np.ndarray
    h_results: dict[str, HFuncResult]
    resample_ks: np.ndarray


def run_consistency(
    d: int,
    n_list,
    h_names,
    reps: int,
    master_seed: int,
) -> list[ConsistencyResult]:
    """Weighted-estimator consistency and resampled-marginal checks.

    For each n: per replicate draw y0 and the ensemble, form E*h and the
    exact posterior expectation, then resample n particles and measure the
    Kolmogorov-Smirnov distance of the first coordinate against
    N(y0_1/2, 1/2).
    """
    hs = [bounded_function(name) for name in h_names]
    out: list[ConsistencyResult] = []
    for n_index, n in enumerate(n_list):
        n = int(n)
        seeds = np.array(
            [
                derive_rep_seed(master_seed, n_index, rep, _STREAM_CONSISTENCY)
                for rep in range(reps)
            ],
            dtype=np.uint64,
        )
        estimates = {h.name: np.empty(reps) for h in hs}
        exacts = {h.name: np.empty(reps) for h in hs}
        ks = np.empty(reps)
        exact_is_mc = {h.name: h.exact is None for h in hs}
        model = ModelSpec(d=d, noise_kind=NoiseKind.GAUSSIAN_IID)
        for rep in range(reps):
            rng = np.random.default_rng(int(seeds[rep]))
            obs = sample_observation(model, rng)
            ensemble = sample_prior(model, n, rng)
            r = obs.y - ensemble.particles
            nw = weights.normalize(-0.5 * np.sum(r * r, axis=1))
            for h in hs:
                estimates[h.name][rep] = float(nw.w @ h.fn(ensemble.particles))
                if h.exact is not None:
                    exacts[h.name][rep] = h.exact(obs.y)
                else:
                    exacts[h.name][rep] = _mc_exact(h, obs.y, seed=int(seeds[rep]) ^ 0x5DEECE66D)
            first = resample(nw, ensemble, n, rng).particles[:, 0]
            loc, scale = obs.y[0] / 2.0, math.sqrt(0.5)
            ks[rep] = float(kstest(first, lambda x: ndtr((x - loc) / scale)).statistic)
        h_results = {}
        for h in hs:
            vb, log_vb = variance_bound(n, d, h.bound)
            h_results[h.name] = HFuncResult(
                name=h.name,
                estimates=estimates[h.name],
                exacts=exacts[h.name],
                abs_errors=np.abs(estimates[h.name] - exacts[h.name]),
                variance_bound=vb,
                log10_variance_bound=log_vb,
                exact_is_mc=exact_is_mc[h.name],
            )
        out.append(
            ConsistencyResult(d=d, n=n, seeds=seeds, h_results=h_results, resample_ks=ks)
        )
    return out
