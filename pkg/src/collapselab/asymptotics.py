"""Closed-form asymptotic predictors and standardizations for weight collapse.

Covers the standardized log-likelihood scores for the Gaussian and iid-kernel
settings, Gumbel extreme-value approximations of the minimum score, the exact
conditional expectation of the exponentiated-gap sum under normal scores,
collapse-rate predictors for the Gaussian and multivariate-Cauchy models, the
data-dependent limiting posterior of the multivariate-Cauchy model, and
Monte Carlo verification of the moment bounds that back the normal window
approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gammaln, log_ndtr, ndtr

from .models import Ensemble, Observation, SpectralForm

SQRT_2PI = math.sqrt(2.0 * math.pi)


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to converge to the requested tolerance."""


# ---------------------------------------------------------------------------
# standardizations


@dataclass(frozen=True)
class GaussianStandardization:
    """Scores S_i with their location/scale constants for the Gaussian model.

    For every particle, sum_j lambda_j^2 W_ij^2 == scale * S_i + location,
    which ties the scores back to the squared residuals exactly.
    """

    xi: np.ndarray
    sigma_dprime_sq: float
    scale: float
    location: float
    scores: np.ndarray


@dataclass(frozen=True)
class IidStandardization:
    mu_y: np.ndarray
    sigmasq_y: np.ndarray
    scores: np.ndarray
    sigma_hat: float


def sigma_dprime_sq(lambdas, xi) -> float:
    """(2/d') sum_j lambda_j^4 (1 + 2 mu_j^2), the limiting score variance scale."""
    lambdas = np.asarray(lambdas, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if lambdas.size == 0:
        raise ValueError("empty lambdas")
    if np.any(lambdas <= 0):
        raise ValueError("all lambdas must be positive")
    return float(2.0 / lambdas.size * np.sum(lambdas**4 * (1.0 + 2.0 * xi**2)))


def standardize_gaussian(
    ensemble: Ensemble, obs: Observation, spectral: SpectralForm
) -> GaussianStandardization:
    """Centered and scaled squared-residual scores for the Gaussian model.

    Smaller score means smaller residual and hence larger weight; the
    argmin of the scores is the argmax of the weights.
    """
    lam = spectral.lambdas
    d_prime = spectral.d_prime
    Qd = spectral.Q[:, :d_prime]
    xi = spectral.signal_coords(obs.y)
    hx = ensemble.particles if spectral.h is None else ensemble.particles @ spectral.h.T
    v = (hx @ Qd) / lam
    w = xi - v
    lam2 = lam * lam
    scale_sq = 2.0 * np.sum(lam2 * lam2 * (1.0 + 2.0 * xi * xi))
    if scale_sq <= 0:
        raise ValueError("degenerate standardization: zero scale")
    scale = math.sqrt(scale_sq)
    location = float(np.sum(lam2 * (1.0 + xi * xi)))
    scores = ((w * w - (1.0 + xi * xi)) @ lam2) / scale
    return GaussianStandardization(
        xi=xi,
        sigma_dprime_sq=sigma_dprime_sq(lam, xi),
        scale=scale,
        location=location,
        scores=scores,
    )


def _normal_pdf(x):
    return np.exp(-0.5 * x * x) / SQRT_2PI


def kernel_moments(psi, y: float, g=None, tol: float = 1e-8) -> tuple[float, float]:
    """Mean and variance of psi(y - X) for X distributed with density g.

    g defaults to the standard normal.  Integration is adaptive quadrature
    on (-inf, inf) through the x = tan(t) substitution, absolute tolerance
    ``tol``.
    """
    if g is None:
        g = _normal_pdf

    def integrand(t, power):
        x = math.tan(t)
        jac = 1.0 / math.cos(t) ** 2
        val = float(psi(np.asarray(y - x)))
        dens = float(g(np.asarray(x)))
        return (val**power) * dens * jac

    results = []
    for power in (1, 2):
        try:
            out = integrate.quad(
                integrand,
                -math.pi / 2,
                math.pi / 2,
                args=(power,),
                epsabs=tol,
                epsrel=0.0,
                limit=200,
                full_output=1,
            )
        except Exception as exc:  # psi or g blew up inside the integrand
            raise QuadratureError(f"kernel moment integrand failed at y={y}: {exc}") from exc
        val, abserr = out[0], out[1]
        if len(out) > 3 or not math.isfinite(val) or abserr > 100 * tol:
            msg = out[3] if len(out) > 3 else f"abserr={abserr:.2e}"
            raise QuadratureError(f"kernel moment quadrature did not converge at y={y}: {msg}")
        results.append(val)
    m1, m2 = results
    return m1, max(m2 - m1 * m1, 0.0)


def batch_kernel_moments(
    psi, ys, g=None, tol: float = 1e-8, max_doublings: int = 6
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized kernel moments for many y values at once.

    Same tan-substitution integral as :func:`kernel_moments`, evaluated on a
    shared grid that doubles until two refinements agree to ``tol`` for every
    y.  Cross-checked against the adaptive path in the test suite.
    """
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    if g is None:
        g = _normal_pdf
    prev = None
    m = 512
    for _ in range(max_doublings):
        t = (np.arange(1, m) / m - 0.5) * np.pi
        x = np.tan(t)
        wts = g(x) * (np.pi / m) / np.cos(t) ** 2
        norm = wts.sum()
        v = psi(ys[:, None] - x[None, :])
        if np.any(np.isposinf(v)) or np.any(np.isnan(v)):
            raise QuadratureError("psi produced +inf or NaN on the quadrature grid")
        m1 = v @ wts
        m2 = (v * v) @ wts
        if prev is not None and abs(norm - 1.0) < 1e-9:
            dm1 = np.max(np.abs(m1 - prev[0]))
            dm2 = np.max(np.abs(m2 - prev[1]))
            if dm1 <= tol and dm2 <= tol:
                return m1, np.maximum(m2 - m1 * m1, 0.0)
        prev = (m1, m2)
        m *= 2
    raise QuadratureError(f"batch kernel moments did not converge after {max_doublings} doublings")


def standardize_iid(ensemble: Ensemble, obs: Observation, psi, g=None) -> IidStandardization:
    """Standardized iid-kernel scores S_i = sum_j (mu(y_j) - psi(y_j - X_ij)) / B.

    B = (sum_j sigma^2(y_j))^(1/2).  Scores are oriented so that the
    smallest score carries the largest weight, matching the Gaussian-model
    convention: S_i is a strictly decreasing affine map of the log kernel.
    """
    y = obs.y
    mu_y, s2_y = batch_kernel_moments(psi, y, g=g)
    total = float(s2_y.sum())
    if total <= 0:
        raise ValueError("zero total kernel variance")
    b = math.sqrt(total)
    v = psi(y[None, :] - ensemble.particles)
    scores = (mu_y.sum() - v.sum(axis=1)) / b
    return IidStandardization(
        mu_y=mu_y,
        sigmasq_y=s2_y,
        scores=scores,
        sigma_hat=math.sqrt(total / y.shape[0]),
    )


# ---------------------------------------------------------------------------
# extreme-value and rate predictors


@dataclass(frozen=True)
class GumbelMinApprox:
    """Extreme-value approximation of the minimum of n iid standard normals."""

    location: float
    scale: float
    mean: float


def gumbel_min_approx(n) -> GumbelMinApprox:
    """Location, scale, and mean of the minimum-score Gumbel limit.

    location = -sqrt(2 log n) + (log log n + log 4 pi) / (2 sqrt(2 log n)),
    scale = 1/sqrt(2 log n); the mean subtracts Euler-Mascheroni times the
    scale (minimum convention).  Requires n > 1.
    """
    if not n > 1:
        raise ValueError("n must exceed 1")
    a = math.sqrt(2.0 * math.log(n))
    location = -a + (math.log(math.log(n)) + math.log(4.0 * math.pi)) / (2.0 * a)
    scale = 1.0 / a
    return GumbelMinApprox(location=location, scale=scale, mean=location - np.euler_gamma * scale)


def log_norm_sf(x: float) -> float:
    """log of the standard normal survival function, accurate in both tails."""
    return float(log_ndtr(-np.asarray(x, dtype=float)))


def expected_t_normal_closed_form(s1: float, sigma: float, d: int, n: int) -> float:
    """Exact E(T | minimum score = s1) when scores are standard normal.

    Computes (n-1) exp(sigma sqrt(d) s1 + sigma^2 d / 2)
    Phi_bar(s1 + sigma sqrt(d)) / Phi_bar(s1) entirely in log space, so the
    huge/tiny factor pair never overflows.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if not (sigma > 0 and d >= 1):
        raise ValueError("need sigma > 0 and d >= 1")
    if not math.isfinite(s1):
        raise ValueError("s1 must be finite")
    c = sigma * math.sqrt(d)
    log_den = log_norm_sf(s1)
    if log_den == -math.inf:
        raise ValueError("lower-tail probability underflowed to zero at s1")
    log_val = math.log(n - 1) + c * s1 + 0.5 * c * c + log_norm_sf(s1 + c) - log_den
    return math.exp(log_val)


def gaussian_collapse_rate(n: int, d: int, sigma_sq: float) -> float:
    """sqrt(2 log n / (sigma^2 d)), the Gaussian-model collapse rate."""
    if n < 2 or d < 1:
        raise ValueError("need n >= 2 and d >= 1")
    if not sigma_sq > 0:
        raise ValueError("sigma_sq must be positive")
    return math.sqrt(2.0 * math.log(n) / (sigma_sq * d))


def cauchy_sigma_sq(z0: float) -> float:
    """Conditional score variance scale (6 + 4/z0^2) / (2 + 1/z0^2)^2."""
    if z0 == 0:
        raise ValueError("z0 must be nonzero")
    inv = 1.0 / (z0 * z0)
    return (6.0 + 4.0 * inv) / (2.0 + inv) ** 2


@dataclass(frozen=True)
class CauchyCollapsePredictor:
    """Collapse-rate prediction for the multivariate Cauchy model, given z0.

    a = sigma^2(z0)/2 and b = sigma(z0)/2 are the quadratic and linear
    exponent coefficients; predicted_t = r_n / (sqrt(2 pi) ((1-a) r_n + b)).
    """

    z0: float
    sigma_z0_sq: float
    a: float
    b: float
    r_n: float
    predicted_t: float


def cauchy_predicted_t(n: int, d: int, z0: float) -> CauchyCollapsePredictor:
    if n < 2 or d < 1:
        raise ValueError("need n >= 2 and d >= 1")
    s2 = cauchy_sigma_sq(z0)
    a = 0.5 * s2
    b = 0.5 * math.sqrt(s2)
    r_n = math.sqrt(2.0 * math.log(n) / d)
    predicted = r_n / (SQRT_2PI * ((1.0 - a) * r_n + b))
    return CauchyCollapsePredictor(
        z0=z0, sigma_z0_sq=s2, a=a, b=b, r_n=r_n, predicted_t=predicted
    )


@dataclass(frozen=True)
class AverageCollapseRate:
    value: float
    proxy: float
    r_n: float


def average_rate_from_r(r: float, eps: float) -> AverageCollapseRate:
    """Closed form r log(1 + eps/r) with the asymptotic proxy r |log r|."""
    if not (r > 0 and eps >= 0):
        raise ValueError("need r > 0 and eps >= 0")
    return AverageCollapseRate(
        value=r * math.log1p(eps / r), proxy=r * abs(math.log(r)), r_n=r
    )


def cauchy_average_rate(n: int, d: int, eps: float) -> AverageCollapseRate:
    """z0-averaged collapse rate r_n log(1 + eps/r_n) for the Cauchy model."""
    if n < 2 or d < 1:
        raise ValueError("need n >= 2 and d >= 1")
    if not eps > 0:
        raise ValueError("eps must be positive")
    return average_rate_from_r(math.sqrt(2.0 * math.log(n) / d), eps)


@dataclass(frozen=True)
class PosteriorParams:
    mean: np.ndarray
    var: float
    clamped: bool


def limiting_posterior_params(y) -> PosteriorParams:
    """Data-dependent Gaussian posterior limit N(y d/||y||^2, (1 - d/||y||^2) I).

    A negative variance (possible at finite d) is clamped to zero with the
    flag set.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 1:
        raise ValueError("y must be a non-empty vector")
    norm_sq = float(y @ y)
    if norm_sq == 0:
        raise ValueError("y must be nonzero")
    d = y.size
    ratio = d / norm_sq
    var = 1.0 - ratio
    clamped = var < 0
    return PosteriorParams(mean=y * ratio, var=max(var, 0.0), clamped=clamped)


# ---------------------------------------------------------------------------
# moment bounds


def abs_moment_normal(k: int) -> float:
    """E|Z|^k for Z ~ N(0,1), in closed form."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    return math.exp(0.5 * k * math.log(2.0) + gammaln((k + 1) / 2.0) - gammaln(0.5))

def abs_moment_bound(k: int) -> float:
    """The factorial-type bound 2^(k/2) ceil(k/2)! on E|Z|^k."""
    return 2.0 ** (k / 2.0) * math.factorial(math.ceil(k / 2))


def abs_central_chisq_moment(k: int) -> float:
    """E|Z^2 - 1|^k for Z ~ N(0,1), by deterministic quadrature."""

    def f(x):
        return abs(x * x - 1.0) ** k * math.exp(-0.5 * x * x) / SQRT_2PI

    inner, _ = integrate.quad(f, 0.0, 1.0, epsabs=1e-12, limit=200)
    outer, _ = integrate.quad(f, 1.0, np.inf, epsabs=1e-12, limit=200)
    return 2.0 * (inner + outer)


def abs_central_chisq_bound(k: int) -> float:
    """The symmetrization bound 4^k (ceil(k/2)!)^2 on E|Z^2 - 1|^k."""
    return 4.0**k * math.factorial(math.ceil(k / 2)) ** 2


def mu_power_sum_bound(mus, cap_m: float, k: int) -> tuple[float, float]:
    """lhs = sum |mu_j|^k against the bound (cap_m/4)^(k/2) d.

    Equality holds for equal mu_j at the sum-of-squares boundary
    sum mu_j^2 = cap_m d / 4.
    """
    mus = np.asarray(mus, dtype=float)
    return float(np.sum(np.abs(mus) ** k)), (cap_m / 4.0) ** (k / 2.0) * mus.size


@dataclass(frozen=True)
class MomentBoundReport:
    """One Monte Carlo check of the k-th Lyapunov-type moment bound.

    lhs is the normalized weighted moment sum; rhs is C^k k! d^(-(k-2)/2)
    with the explicit recorded constant C; pass requires
    lhs <= rhs + 3 * mc_stderr.
    """

    k: int
    lhs: float
    rhs: float
    c_used: float
    passed: bool
    mc_stderr: float
    sigma_d_sq: float
    warn_small_mc: bool


def moment_bound_constant(delta: float, m_low: float, m_high: float,
                          mu_max: float, mu_meansq: float) -> float:
    """Explicit constant assembled from the factorial moment bounds.

    C = (2 / (delta^2 sqrt(m))) * max(4, 2^(3/2) max(1, mu_max)
    max(1, mean mu^2)^(1/3)); recorded for reproducibility, not sharpness.
    """
    del m_high  # enters only through the mu terms, kept for the signature
    growth = max(4.0, 2.0**1.5 * max(1.0, mu_max) * max(1.0, mu_meansq) ** (1.0 / 3.0))
    return 2.0 / (delta * delta * math.sqrt(m_low)) * growth


def moment_bound_check(
    lambdas,
    mus,
    k: int,
    mc_n: int,
    rng: np.random.Generator,
    delta: float | None = None,
    m_low: float | None = None,
    m_high: float | None = None,
) -> MomentBoundReport:
    """Monte Carlo check of the normalized k-th moment sum against C^k k! d^(-(k-2)/2).

    The left side normalizes by B_d^k = (d sigma_d^2)^(k/2), the scale of the
    standardized score denominator.  delta / m bounds default to the values
    realized by this (lambda, mu) instance.
    """
    lam = np.asarray(lambdas, dtype=float)
    mus = np.asarray(mus, dtype=float)
    if lam.shape != mus.shape or lam.ndim != 1 or lam.size == 0:
        raise ValueError("lambdas and mus must be matching non-empty vectors")
    if np.any(lam <= 0):
        raise ValueError("lambdas must be positive")
    if k < 3:
        raise ValueError("k must be >= 3")
    if mc_n < 2:
        raise ValueError("mc_n must be >= 2")
    d = lam.size
    s_d_sq = sigma_dprime_sq(lam, mus)
    delta = delta if delta is not None else min(lam.min(), 1.0 / lam.max())
    m_low = m_low if m_low is not None else s_d_sq
    m_high = m_high if m_high is not None else s_d_sq

    b_k = (d * s_d_sq) ** (k / 2.0)
    lam2k = lam ** (2 * k)
    means = np.empty(d)
    variances = np.empty(d)
    for j in range(d):
        z = rng.standard_normal(mc_n)
        t = np.abs((z + mus[j]) ** 2 - (1.0 + mus[j] ** 2)) ** k
        means[j] = t.mean()
        variances[j] = t.var()
    lhs = float(np.sum(lam2k * means) / b_k)
    stderr = float(math.sqrt(np.sum(lam2k**2 * variances / mc_n)) / b_k)

    c = moment_bound_constant(delta, m_low, m_high, float(np.abs(mus).max()),
                              float(np.mean(mus**2)))
    rhs = c**k * math.factorial(k) * d ** (-(k - 2) / 2.0)
    return MomentBoundReport(
        k=k,
        lhs=lhs,
        rhs=rhs,
        c_used=c,
        passed=lhs <= rhs + 3.0 * stderr,
        mc_stderr=stderr,
        sigma_d_sq=s_d_sq,
        warn_small_mc=mc_n < 10_000,
    )


# ---------------------------------------------------------------------------
# empirical normality window


@dataclass(frozen=True)
class WindowCheckReport:
    """Empirical cdf-ratio deviations from the normal over [-d^eta, d^eta].

    Deviations and bands are reported on the grid restricted to the
    Monte Carlo resolvable region min(Phi, 1-Phi) >= 10/n_samples.
    """

    eta: float
    window: float
    grid: np.ndarray
    lower_dev: np.ndarray
    upper_dev: np.ndarray
    band_rel: np.ndarray
    sup_dev: float
    n_samples: int

    def sup_dev_within(self, lo: float, hi: float) -> float:
        sel = (self.grid >= lo) & (self.grid <= hi)
        if not np.any(sel):
            raise ValueError("no grid points in the requested window")
        return float(np.maximum(self.lower_dev[sel], self.upper_dev[sel]).max())


def normal_window_check(
    scores, d: int, eta: float = 0.15, grid_points: int = 81
) -> WindowCheckReport:
    """Compare the empirical score cdf against the normal on [-d^eta, d^eta].

    Reports sup over the resolvable grid of |G_hat/Phi - 1| and
    |(1 - G_hat)/(1 - Phi) - 1| together with 3-sigma binomial bands.
    """
    scores = np.asarray(scores, dtype=float)
    n = scores.size
    if n < 10_000:
        raise ValueError("need at least 1e4 score samples")
    if not 0 < eta < 1.0 / 6.0:
        raise ValueError("eta must lie in (0, 1/6)")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if scores.max() == scores.min():
        raise ValueError("degenerate scores: empirical cdf is a single jump")
    window = float(d) ** eta
    grid = np.linspace(-window, window, grid_points)
    phi = ndtr(grid)
    resolvable = np.minimum(phi, 1.0 - phi) >= 10.0 / n
    if not np.any(resolvable):
        raise ValueError("empty resolvable region at this sample size")
    grid = grid[resolvable]
    phi = phi[resolvable]
    sorted_scores = np.sort(scores)
    ghat = np.searchsorted(sorted_scores, grid, side="right") / n
    lower_dev = np.abs(ghat / phi - 1.0)
    upper_dev = np.abs((1.0 - ghat) / (1.0 - phi) - 1.0)
    band = 3.0 * np.sqrt(phi * (1.0 - phi) / n) / np.minimum(phi, 1.0 - phi)
    return WindowCheckReport(
        eta=eta,
        window=window,
        grid=grid,
        lower_dev=lower_dev,
        upper_dev=upper_dev,
        band_rel=band,
        sup_dev=float(np.maximum(lower_dev, upper_dev).max()),
        n_samples=n,
    )
