"""Observation models, prior/noise sampling, and log-likelihood kernels.

The model is a single-update-step state-space observation ``Y = H X + eps``
with a Gaussian prior on the state and one of three noise families:
iid Gaussian, iid Cauchy, or multivariate Cauchy.  All kernels return
*unnormalized* log densities; additive constants cancel when weights are
normalized.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

log = logging.getLogger(__name__)

# eigenvalues below this fraction of the largest are treated as zero rank
RANK_TOL = 1e-10

LOG_PI = math.log(math.pi)


class NoiseKind(str, Enum):
    GAUSSIAN_IID = "gaussian"
    CAUCHY_IID = "cauchy-iid"
    CAUCHY_MULTIVARIATE = "cauchy-mv"


@dataclass(frozen=True)
class ModelSpec:
    """Observation model ``Y = H X + eps``.

    Defaults reproduce the simulation setting: square identity operator,
    standard Gaussian prior, unit noise scale.
    """

    d: int
    q: int | None = None
    H: np.ndarray | None = None
    prior_mean: np.ndarray | None = None
    prior_cov: np.ndarray | None = None
    noise_kind: NoiseKind = NoiseKind.GAUSSIAN_IID
    noise_scale: float = 1.0

    def __post_init__(self):
        if not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d!r}")
        q = self.d if self.q is None else self.q
        if not isinstance(q, (int, np.integer)) or q < 1:
            raise ValueError(f"q must be a positive integer, got {self.q!r}")
        object.__setattr__(self, "q", int(q))
        object.__setattr__(self, "d", int(self.d))

        H = self.H
        if H is None:
            if self.q != self.d:
                raise ValueError("H must be given explicitly when q != d")
        else:
            H = np.asarray(H, dtype=float)
            if H.shape != (self.d, self.q):
                raise ValueError(f"H must be {self.d}x{self.q}, got {H.shape}")
            if not np.all(np.isfinite(H)):
                raise ValueError("H must be finite")
        object.__setattr__(self, "H", H)

        mean = self.prior_mean
        if mean is not None:
            mean = np.asarray(mean, dtype=float)
            if mean.shape != (self.q,):
                raise ValueError(f"prior_mean must have shape ({self.q},)")
        object.__setattr__(self, "prior_mean", mean)

        cov = self.prior_cov
        if cov is not None:
            cov = np.asarray(cov, dtype=float)
            if cov.shape != (self.q, self.q):
                raise ValueError(f"prior_cov must be {self.q}x{self.q}")
            if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
                raise ValueError("prior_cov must be symmetric")
            eig = np.linalg.eigvalsh(cov)
            if eig.min() < -1e-10 * max(1.0, eig.max()):
                raise ValueError("prior_cov must be positive semi-definite")
        object.__setattr__(self, "prior_cov", cov)

        if not (np.isfinite(self.noise_scale) and self.noise_scale > 0):
            raise ValueError("noise_scale must be a positive real")
        object.__setattr__(self, "noise_kind", NoiseKind(self.noise_kind))

    @property
    def identity_operator(self) -> bool:
        return self.H is None

    @property
    def identity_prior_cov(self) -> bool:
        return self.prior_cov is None

    def operator(self) -> np.ndarray:
        return np.eye(self.d) if self.H is None else self.H

    def apply_operator(self, x: np.ndarray) -> np.ndarray:
        """H @ x for a single state or a matrix of row states."""
        if self.H is None:
            return x
        return x @ self.H.T if x.ndim == 2 else self.H @ x


@dataclass(frozen=True)
class Ensemble:
    """n particles in state space, one per row."""

    particles: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.particles, dtype=float)
        if p.ndim != 2 or p.shape[0] < 1:
            raise ValueError("particles must be a non-empty n x q matrix")
        if not np.all(np.isfinite(p)):
            raise ValueError("particles must be finite")
        object.__setattr__(self, "particles", p)

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    @property
    def q(self) -> int:
        return self.particles.shape[1]


@dataclass(frozen=True)
class Observation:
    """One realized data vector, with the generating truth when known."""

    y: np.ndarray
    truth: np.ndarray | None = None
    noise: np.ndarray | None = None
    z0: float | None = None


@dataclass(frozen=True)
class SpectralForm:
    """Eigenstructure of cov(HX): ``Q diag(lambda^2, 0, ...) Q^T = H Sigma_X H^T``.

    ``h`` retains the observation operator the decomposition was built from
    (identity when None) so scores can be computed downstream.
    """

    d_prime: int
    lambdas: np.ndarray
    Q: np.ndarray
    h: np.ndarray | None = None

    @property
    def D(self) -> np.ndarray:
        return np.diag(self.lambdas)

    def signal_coords(self, y: np.ndarray) -> np.ndarray:
        """D^{-1} Q^T y restricted to the signal subspace."""
        return (self.Q[:, : self.d_prime].T @ y) / self.lambdas


def sample_prior(model: ModelSpec, n: int, rng: np.random.Generator) -> Ensemble:
    """Draw n iid rows from the Gaussian prior.

    Identity covariance takes the fast path (a single standard-normal fill),
    which the streaming experiment runner reproduces block by block.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if model.identity_prior_cov:
        x = rng.standard_normal((n, model.q))
    else:
        vals, vecs = np.linalg.eigh(model.prior_cov)
        vals = np.clip(vals, 0.0, None)
        z = rng.standard_normal((n, model.q))
        x = z @ (vecs * np.sqrt(vals)).T
    if model.prior_mean is not None:
        x = x + model.prior_mean
    return Ensemble(x)


def sample_mv_cauchy(d: int, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Multivariate Cauchy draw ``[Z_1..Z_d] / |Z_0|`` with Z iid N(0,1).

    Returns (vector, z0); z0 is kept so collapse predictors can condition
    on it.  |z0| underflow triggers a logged redraw to keep output finite.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    z0 = float(rng.standard_normal())
    while abs(z0) < 1e-300:
        log.warning("redrawing z0 after underflow (|z0| < 1e-300)")
        z0 = float(rng.standard_normal())
    z = rng.standard_normal(d)
    return z / abs(z0), z0


def sample_observation(model: ModelSpec, rng: np.random.Generator) -> Observation:
    """Draw truth from the prior, noise per the model family, y = H x0 + eps.

    Draw order is fixed (truth first, then noise; for multivariate Cauchy
    z0 before the vector) so replicates can be regenerated exactly.
    """
    truth = sample_prior(model, 1, rng).particles[0]
    kind, scale = model.noise_kind, model.noise_scale
    z0 = None
    if kind is NoiseKind.GAUSSIAN_IID:
        eps = scale * rng.standard_normal(model.d)
    elif kind is NoiseKind.CAUCHY_IID:
        # inverse-CDF transform of uniforms
        eps = scale * np.tan(np.pi * (rng.random(model.d) - 0.5))
    else:
        vec, z0 = sample_mv_cauchy(model.d, rng)
        eps = scale * vec
    y = model.apply_operator(truth) + eps
    return Observation(y=y, truth=truth, noise=eps, z0=z0)


def psi_gaussian(u):
    """Log of the unnormalized unit Gaussian kernel."""
    u = np.asarray(u, dtype=float)
    return -0.5 * u * u


def psi_cauchy(u):
    """Log density of the standard Cauchy, -log(pi (1 + u^2))."""
    u = np.asarray(u, dtype=float)
    return -(LOG_PI + np.log1p(u * u))


def log_kernel_gaussian(y, x, H=None) -> float | np.ndarray:
    """-||y - Hx||^2 / 2 (unnormalized log Gaussian kernel).

    x may be one state vector or an n x q matrix of row states.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
        raise ValueError("non-finite input")
    hx = x if H is None else (x @ np.asarray(H).T if x.ndim == 2 else np.asarray(H) @ x)
    r = y - hx
    val = -0.5 * np.sum(r * r, axis=-1)
    return float(val) if np.ndim(val) == 0 else val


def log_kernel_iid(y, x, psi) -> float | np.ndarray:
    """Sum_j psi(y_j - x_j) for an iid observation kernel (H = identity).

    -inf values are allowed (zero likelihood); +inf is an error.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
        raise ValueError("non-finite input")
    v = np.asarray(psi(y - x), dtype=float)
    if np.any(np.isposinf(v)) or np.any(np.isnan(v)):
        raise ValueError("psi produced +inf or NaN on a residual")
    val = np.sum(v, axis=-1)
    return float(val) if np.ndim(val) == 0 else val


def log_kernel_mv_cauchy(y, x) -> float | np.ndarray:
    """-((d+1)/2) log(1 + ||y - x||^2), the multivariate Cauchy log kernel."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
        raise ValueError("non-finite input")
    d = y.shape[-1] if y.ndim else 1
    r = y - x
    val = -0.5 * (d + 1) * np.log1p(np.sum(r * r, axis=-1))
    return float(val) if np.ndim(val) == 0 else val


def spectral_decompose(model: ModelSpec) -> SpectralForm:
    """Eigendecompose cov(HX) = H Sigma_X H^T into Q, lambdas, d'.

    lambda_j^2 are the nonzero eigenvalues (descending); d' counts those
    above RANK_TOL relative to the largest.
    """
    H = model.operator()
    cov = H @ (H.T if model.identity_prior_cov else model.prior_cov @ H.T)
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    if vals[0] <= 0:
        raise ValueError("degenerate signal: cov(HX) has no positive eigenvalue")
    keep = vals > RANK_TOL * vals[0]
    d_prime = int(np.count_nonzero(keep))
    lambdas = np.sqrt(vals[:d_prime])
    return SpectralForm(d_prime=d_prime, lambdas=lambdas, Q=vecs, h=model.H)
