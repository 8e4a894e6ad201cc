"""Fast invariant suite backing the `check` CLI subcommand.

Each check is independent, seeded, and cheap; the whole battery is meant to
finish well under 30 seconds.
"""

from __future__ import annotations

import math
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import asymptotics, experiments, io, weights
from .models import ModelSpec, NoiseKind, log_kernel_gaussian, sample_observation, sample_prior, spectral_decompose


@dataclass(frozen=True)
class CheckOutcome:
    name: str
    passed: bool
    detail: str


def _check_normalization() -> CheckOutcome:
    rng = np.random.default_rng(11)
    logw = rng.standard_normal(10_000) * 50
    nw = weights.normalize(logw)
    err = abs(nw.w.sum() - 1.0)
    return CheckOutcome("weight normalization sums to 1", err <= 1e-12, f"|sum-1| = {err:.2e}")


def _check_shift_invariance() -> CheckOutcome:
    rng = np.random.default_rng(12)
    logw = rng.standard_normal(500) * 10
    a = weights.normalize(logw).w
    b = weights.normalize(logw + 12345.678).w
    err = float(np.max(np.abs(a - b)))
    return CheckOutcome("log-sum-exp shift invariance", err <= 1e-12, f"max |dw| = {err:.2e}")


def _gaussian_instance(seed: int, d: int = 25, n: int = 400):
    rng = np.random.default_rng(seed)
    model = ModelSpec(d=d)
    obs = sample_observation(model, rng)
    ens = sample_prior(model, n, rng)
    spectral = spectral_decompose(model)
    std = asymptotics.standardize_gaussian(ens, obs, spectral)
    logw = log_kernel_gaussian(obs.y, ens.particles)
    return obs, ens, std, logw


def _check_bridge_identity() -> CheckOutcome:
    _, _, std, logw = _gaussian_instance(13)
    nw = weights.normalize(logw)
    d_prime = std.xi.shape[0]
    sigma = 0.5 * math.sqrt(std.sigma_dprime_sq)
    t = weights.t_nd_from_scores(std.scores, sigma, d_prime)
    err = abs(nw.max_weight - 1.0 / (1.0 + t)) / nw.max_weight
    return CheckOutcome("w_max = 1/(1+T) bridge identity", err <= 1e-10, f"rel err = {err:.2e}")


def _check_affine_identity() -> CheckOutcome:
    rng = np.random.default_rng(14)
    d, q, n = 8, 6, 50
    model = ModelSpec(d=d, q=q, H=rng.standard_normal((d, q)))
    obs = sample_observation(model, rng)
    ens = sample_prior(model, n, rng)
    spectral = spectral_decompose(model)
    std = asymptotics.standardize_gaussian(ens, obs, spectral)
    hx = ens.particles @ model.H.T
    resid_sq = ((obs.y - hx) ** 2).sum(axis=1)
    qt_y = spectral.Q.T @ obs.y
    orth = float((qt_y[spectral.d_prime :] ** 2).sum())
    recon = std.scale * std.scores + std.location + orth
    err = float(np.max(np.abs(recon - resid_sq) / np.abs(resid_sq)))
    return CheckOutcome("residual/score affine identity", err <= 1e-8, f"rel err = {err:.2e}")


def _check_argmax_argmin() -> CheckOutcome:
    _, _, std, logw = _gaussian_instance(15)
    ok = int(np.argmax(logw)) == int(np.argmin(std.scores))
    return CheckOutcome("argmax weight = argmin score", ok, "indices agree" if ok else "mismatch")


def _check_csv_determinism() -> CheckOutcome:
    def run_once(workers: int) -> bytes:
        cell = experiments.run_collapse_cell(
            NoiseKind.GAUSSIAN_IID, 4, 50, 12, master_seed=99, workers=workers
        )
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "reps.csv"
            io.write_reps_csv(path, "check", [cell])
            return path.read_bytes()

    first = run_once(1)
    second = run_once(1)
    third = run_once(2)
    ok = first == second == third
    return CheckOutcome("CSV rerun and thread-count determinism", ok,
                        "byte-identical" if ok else "outputs differ")


def _check_brute_force_small_cell() -> CheckOutcome:
    d, n = 2, 3
    cell = experiments.run_collapse_cell(NoiseKind.GAUSSIAN_IID, d, n, 5, master_seed=7)
    worst = 0.0
    for rec in cell.records:
        rng = np.random.default_rng(rec.seed)
        x0 = rng.standard_normal((1, d))[0]
        eps = rng.standard_normal(d)
        y = x0 + eps
        x = rng.standard_normal((n, d))
        lw = [-0.5 * sum((y[j] - x[i, j]) ** 2 for j in range(d)) for i in range(n)]
        m = max(lw)
        ws = [math.exp(v - m) for v in lw]
        w_max = max(ws) / sum(ws)
        worst = max(worst, abs(w_max - rec.w_max))
    return CheckOutcome("brute-force oracle at (d=2, n=3)", worst <= 1e-12, f"max |dw| = {worst:.2e}")


def _check_moment_bounds() -> CheckOutcome:
    rng = np.random.default_rng(16)
    lam = np.full(10, 1.0)
    mus = np.full(10, 0.7)
    details = []
    ok = True
    for k in (3, 4):
        rep = asymptotics.moment_bound_check(lam, mus, k, 50_000, rng)
        ok = ok and rep.passed
        details.append(f"k={k}: lhs={rep.lhs:.3g} rhs={rep.rhs:.3g}")
    return CheckOutcome("moment bounds k <= 4", ok, "; ".join(details))


def _check_quadrature() -> CheckOutcome:
    from .models import psi_gaussian

    mu, var = asymptotics.kernel_moments(psi_gaussian, 1.3)
    mu_exact = -(1.3**2 + 1.0) / 2.0
    var_exact = 1.3**2 + 0.5
    err = max(abs(mu - mu_exact), abs(var - var_exact))
    return CheckOutcome("kernel-moment quadrature sanity", err <= 1e-7, f"max err = {err:.2e}")


ALL_CHECKS = (
    _check_normalization,
    _check_shift_invariance,
    _check_bridge_identity,
    _check_affine_identity,
    _check_argmax_argmin,
    _check_csv_determinism,
    _check_brute_force_small_cell,
    _check_moment_bounds,
    _check_quadrature,
)


def run_checks() -> list[CheckOutcome]:
    return [check() for check in ALL_CHECKS]
