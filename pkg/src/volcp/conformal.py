"""Split conformal core: scores, quantiles, weighted quantiles, intervals.

Scores are volume residuals in mm^3. The weighted quantile follows the
weighted-CP convention that an unsatisfiable cumulative-mass condition
(the test point's own mass is excluded from the sum) yields +inf, i.e. an
unbounded interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .trimask import VolumeTriple

# absolute slack when comparing accumulated probability masses; guards
# float-summation error at exact-boundary cases such as uniform weights
MASS_ATOL = 1e-9


@dataclass(frozen=True)
class ScoreSet:
    """Calibration nonconformity scores with optional sample ids."""

    scores: np.ndarray
    ids: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 1 or s.size < 1:
            raise ValueError("scores must be a nonempty 1D sequence")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", s)
        if self.ids is not None:
            ids = np.asarray(self.ids)
            if ids.shape != s.shape:
                raise ValueError("ids must align with scores")
            object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.scores.size


@dataclass(frozen=True)
class NormalizedWeights:
    """Calibration masses p_i and test-point mass, summing to one."""

    p: np.ndarray
    p_test: float

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if np.any(p < 0) or self.p_test < 0:
            raise ValueError("masses must be nonnegative")
        if abs(p.sum() + self.p_test - 1.0) > 1e-12:
            raise ValueError("masses must sum to 1")
        object.__setattr__(self, "p", p)


@dataclass(frozen=True)
class QuantileResult:
    q_hat: float  # may be math.inf
    alpha: float
    weighted: bool


@dataclass(frozen=True)
class PredictiveInterval:
    """Calibrated volume bounds [lo, hi] (hi may be +inf)."""

    lo: float
    hi: float
    alpha: float
    q_hat_used: float

    def __post_init__(self):
        if not (0.0 <= self.lo <= self.hi):
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")


def score(lo: float, hi: float, y: float) -> float:
    """Nonconformity score max(lo - y, y - hi); negative iff y is inside."""
    if lo > hi:
        raise ValueError(f"lo must not exceed hi, got {lo} > {hi}")
    return max(lo - y, y - hi)


def _as_scores(scores: ScoreSet | Sequence[float]) -> ScoreSet:
    return scores if isinstance(scores, ScoreSet) else ScoreSet(np.asarray(scores))


def standard_quantile(scores: ScoreSet | Sequence[float], alpha: float) -> QuantileResult:
    """The ceil((n+1)(1-alpha))-th smallest score, or +inf if out of range."""
    ss = _as_scores(scores)
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    # tiny slack so e.g. 20 * 0.95 does not round up to 20
    k = math.ceil((ss.n + 1) * (1.0 - alpha) - MASS_ATOL)
    if k > ss.n:
        return QuantileResult(q_hat=math.inf, alpha=alpha, weighted=False)
    q = float(np.partition(ss.scores, k - 1)[k - 1])
    return QuantileResult(q_hat=q, alpha=alpha, weighted=False)


def normalized_weights(
    w_calib: Sequence[float], w_test: float
) -> NormalizedWeights:
    """Normalize raw density-ratio weights into masses summing to one."""
    w = np.asarray(w_calib, dtype=np.float64)
    if np.any(w <= 0) or not w_test > 0 or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive and finite")
    total = w.sum() + w_test
    return NormalizedWeights(p=w / total, p_test=w_test / total)


def weighted_quantile(
    scores: ScoreSet | Sequence[float], weights: NormalizedWeights, alpha: float
) -> QuantileResult:
    """Smallest observed score whose accumulated calibration mass reaches
    1 - alpha; +inf when no score does (the test mass is excluded)."""
    ss = _as_scores(scores)
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if weights.p.size != ss.n:
        raise ValueError(f"length mismatch: {ss.n} scores vs {weights.p.size} masses")
    order = np.argsort(ss.scores, kind="stable")
    cum = np.cumsum(weights.p[order])
    hit = np.flatnonzero(cum >= (1.0 - alpha) - MASS_ATOL)
    if hit.size == 0:
        return QuantileResult(q_hat=math.inf, alpha=alpha, weighted=True)
    return QuantileResult(
        q_hat=float(ss.scores[order[hit[0]]]), alpha=alpha, weighted=True
    )


def weighted_quantile_batch(
    scores: np.ndarray, w_calib: np.ndarray, w_test: np.ndarray, alpha: float
) -> np.ndarray:
    """Vectorized weighted quantile for many test points sharing one
    calibration set; works on raw (unnormalized) positive weights."""
    s = np.asarray(scores, dtype=np.float64)
    w = np.asarray(w_calib, dtype=np.float64)
    wt = np.asarray(w_test, dtype=np.float64)
    if s.shape != w.shape:
        raise ValueError("scores and calibration weights must align")
    if np.any(w <= 0) or np.any(wt <= 0):
        raise ValueError("weights must be positive")
    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    cum = np.cumsum(w[order])
    need = (1.0 - alpha) * (cum[-1] + wt) - MASS_ATOL * (cum[-1] + wt)
    idx = np.searchsorted(cum, need, side="left")
    out = np.full(wt.shape, math.inf)
    ok = idx < s.size
    out[ok] = s_sorted[idx[ok]]
    return out


def calibrated_interval(vt: VolumeTriple, q: QuantileResult) -> PredictiveInterval:
    """[max(0, lo - q), hi + q]; an infinite q yields [0, +inf)."""
    if math.isinf(q.q_hat):
        return PredictiveInterval(lo=0.0, hi=math.inf, alpha=q.alpha, q_hat_used=q.q_hat)
    return PredictiveInterval(
        lo=max(0.0, vt.lo - q.q_hat),
        hi=vt.hi + q.q_hat,
        alpha=q.alpha,
        q_hat_used=q.q_hat,
    )


def coverage(intervals: Sequence[PredictiveInterval], truths: Sequence[float]) -> float:
    """Fraction of truths inside their closed interval."""
    if len(intervals) != len(truths):
        raise ValueError("intervals and truths must align")
    if not intervals:
        raise ValueError("empty input")
    hits = sum(1 for iv, y in zip(intervals, truths) if iv.lo <= y <= iv.hi)
    return hits / len(intervals)


def mean_width(intervals: Sequence[PredictiveInterval]) -> float:
    """Mean of (hi - lo); +inf if any interval is unbounded."""
    if not intervals:
        raise ValueError("empty input")
    if any(math.isinf(iv.hi) for iv in intervals):
        return math.inf
    return sum(iv.hi - iv.lo for iv in intervals) / len(intervals)
