"""Stable weight normalization and degeneracy diagnostics.

Log-weight vectors are plain float arrays; -inf entries are valid (zero
likelihood) as long as at least one entry is finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DegenerateLikelihoodError(ValueError):
    """All log-weights are -inf: the likelihood vanished on every particle."""


@dataclass(frozen=True)
class NormalizedWeights:
    w: np.ndarray
    max_weight: float
    argmax: int
    log_norm: float

    @property
    def n(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class CollapseDiagnostics:
    """Degeneracy summaries of one normalized weight vector.

    t_observed = 1/w_max - 1, so w_max = 1/(1 + t_observed) by construction.
    """

    max_weight: float
    t_observed: float
    ess: float
    entropy: float


def normalize(logw) -> NormalizedWeights:
    """Normalize log-weights via log-sum-exp; invariant under additive shifts.

    Ties in the maximum resolve to the lowest index.
    """
    logw = np.asarray(logw, dtype=float)
    if logw.ndim != 1 or logw.shape[0] < 1:
        raise ValueError("log-weights must be a non-empty 1-D array")
    if np.any(np.isnan(logw)):
        raise ValueError("log-weights contain NaN")
    if np.any(np.isposinf(logw)):
        raise ValueError("log-weights contain +inf")
    m = logw.max()
    if m == -math.inf:
        raise DegenerateLikelihoodError("degenerate likelihood: all log-weights are -inf")
    w = np.exp(logw - m)
    s = w.sum()
    w /= s
    argmax = int(np.argmax(logw))
    return NormalizedWeights(
        w=w,
        max_weight=float(w[argmax]),
        argmax=argmax,
        log_norm=float(m + math.log(s)),
    )


def diagnostics(weights: NormalizedWeights) -> CollapseDiagnostics:
    """Max weight, t = 1/w_max - 1, effective sample size, and entropy."""
    w = weights.w
    wmax = weights.max_weight
    ess = 1.0 / float(w @ w)
    pos = w[w > 0]
    entropy = float(-(pos * np.log(pos)).sum())
    return CollapseDiagnostics(
        max_weight=wmax,
        t_observed=1.0 / wmax - 1.0,
        ess=ess,
        entropy=max(entropy, 0.0),
    )


def t_nd_from_scores(scores, sigma: float, d: int) -> float:
    """Sum of exponentiated score gaps from the minimum.

    With scores sorted ascending, returns sum_{l>=2} exp(-sigma sqrt(d)
    (s_(l) - s_(1))); a single score gives 0.  Ties contribute e^0 = 1.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 1 or scores.shape[0] < 1:
        raise ValueError("scores must be a non-empty 1-D array")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if not (sigma > 0):
        raise ValueError("sigma must be positive")
    if scores.shape[0] == 1:
        return 0.0
    gaps = scores - scores.min()
    c = sigma * math.sqrt(d)
    return float(np.exp(-c * gaps).sum() - 1.0)
