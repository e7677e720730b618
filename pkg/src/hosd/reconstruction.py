"""
Waveform recovery, detection threshold selection and component reconstruction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .delay import DelayEstimates, DelayFilter, _records, filter_outputs
from .errors import InvalidInputError, UndefinedStatisticError


@dataclass
class ThresholdChoice:
    theta: float
    bound: float
    statistic: float
    flagged: bool = False

    def __float__(self):
        return float(self.theta)


def recover_waveform(ensemble, delays: DelayEstimates) -> np.ndarray:
    """Delay-compensated average ``(1/L) sum_j s_j x_j((t + tau_j) mod T)``."""
    rec = _records(ensemble)
    lags = np.asarray(delays.lags, dtype=int)
    signs = np.asarray(delays.signs) if delays.signs is not None else np.ones(lags.size)
    if lags.size != rec.shape[0]:
        raise InvalidInputError(f"{lags.size} lags for {rec.shape[0]} records")
    # shifting by -tau in the frequency domain keeps this exact for any T
    X = np.fft.fft(rec, axis=1)
    w = np.arange(rec.shape[1])
    ph = np.exp(2j * np.pi * np.outer(lags, w) / rec.shape[1])
    return np.fft.ifft(np.mean(signs[:, None] * ph * X, axis=0)).real


def _moments_skewness(s1, s2, s3, n):
    m1, m2, m3 = s1 / n, s2 / n, s3 / n
    var = m2 - m1 * m1
    with np.errstate(invalid="ignore", divide="ignore"):
        return (m3 - 3 * m2 * m1 + 2 * m1**3) / var**1.5, var


def _moments_kurtosis(s1, s2, s3, s4, n):
    m1, m2, m3, m4 = s1 / n, s2 / n, s3 / n, s4 / n
    var = m2 - m1 * m1
    c4 = m4 - 4 * m3 * m1 + 6 * m2 * m1**2 - 3 * m1**4
    with np.errstate(invalid="ignore", divide="ignore"):
        return c4 / var**2 - 3.0, var


def subthreshold_skewness(r, theta: float = math.inf) -> float:
    """Skewness of the samples with ``r <= theta``, from raw moments."""
    r = np.asarray(r, dtype=float).ravel()
    sub = r[r <= theta]
    if sub.size < 3:
        raise UndefinedStatisticError("fewer than 3 samples at or below the threshold")
    # skewness is shift invariant; centering on the mean protects the raw-moment form
    sub = sub - sub.mean()
    g, var = _moments_skewness(sub.sum(), (sub**2).sum(), (sub**3).sum(), sub.size)
    if not var > 1e-15 * max(1.0, float(np.max(np.abs(r)))**2):
        raise UndefinedStatisticError("zero variance among sub-threshold samples")
    return float(g)


def skewness_bound(T: int, false_positive_rate: float = 0.05, order: int = 3) -> float:
    """``Phi^-1(1 - FP) * sqrt(6/T)``; ``sqrt(24/T)`` replaces ``sqrt(6/T)`` for order 4."""
    if not 0 < false_positive_rate < 0.5:
        raise InvalidInputError("false_positive_rate must lie in (0, 0.5)")
    dof = 6.0 if order % 2 else 24.0
    return NormalDist().inv_cdf(1 - false_positive_rate) * math.sqrt(dof / T)


def select_threshold(r, false_positive_rate: float = 0.05, order: int = 3) -> ThresholdChoice:
    """Detection threshold from the sub-threshold cumulant criterion.

    Candidate thresholds are the distinct non-negative values of ``r``
    (``|r|`` for even order) scanned from the largest down; the first one
    whose sub-threshold skewness (excess kurtosis for even order) falls
    below :func:`skewness_bound` is returned.  At ``theta = max`` nothing
    is removed, so noise-like output keeps every sample below threshold.
    If no candidate qualifies, ``theta = max`` is returned with
    ``flagged=True``.
    """
    r = np.asarray(r, dtype=float).ravel()
    T = r.size
    bound = skewness_bound(T, false_positive_rate, order)
    even = order % 2 == 0
    score = np.abs(r) if even else r
    top = float(score.max())
    order_idx = np.argsort(score, kind="stable")
    s = score[order_idx]
    v = r[order_idx] - r.mean()
    c1, c2, c3 = np.cumsum(v), np.cumsum(v**2), np.cumsum(v**3)
    c4 = np.cumsum(v**4) if even else None

    cand = np.unique(s)[::-1]
    cand = cand[cand >= 0]
    n = np.searchsorted(s, cand, side="right")
    ok = n >= 3
    cand, n = cand[ok], n[ok]
    if cand.size == 0:
        return ThresholdChoice(top, bound, math.nan, True)
    idx = n - 1
    if even:
        stat, var = _moments_kurtosis(c1[idx], c2[idx], c3[idx], c4[idx], n)
    else:
        stat, var = _moments_skewness(c1[idx], c2[idx], c3[idx], n)
    scale = max(1.0, float(np.max(np.abs(v))) ** 2)
    valid = var > 1e-15 * scale
    passing = np.flatnonzero(valid & (stat < bound))
    if passing.size == 0:
        first = float(stat[0]) if valid[0] else math.nan
        return ThresholdChoice(top, bound, first, True)
    k = passing[0]
    return ThresholdChoice(float(cand[k]), bound, float(stat[k]), False)


def threshold_window(r, theta: float, order: int = 3) -> np.ndarray:
    """Hard-threshold window: keep ``r`` where it exceeds ``theta`` (``|r|`` for even order)."""
    r = np.asarray(r, dtype=float)
    score = np.abs(r) if order % 2 == 0 else r
    return np.where(score > theta, r, 0.0)


def reconstruct_component(waveform, g: DelayFilter, x, theta: float, order: int = 3) -> np.ndarray:
    """``y = f * w`` with ``w`` the hard-thresholded filter output ``g * x``.

    ``x`` may be a single record or an (L, T) array.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.fft.fft(np.atleast_2d(x), axis=1)
    w = threshold_window(filter_outputs(g, X), float(theta), order)
    y = np.fft.ifft(np.fft.fft(w, axis=1) * np.fft.fft(np.asarray(waveform, float))[None, :], axis=1).real
    return y[0] if single else y


def fit_scale(x, y) -> float:
    """Least-squares scalar ``a`` minimizing ``||x - a y||^2`` summed over records."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise InvalidInputError(f"shape mismatch {x.shape} vs {y.shape}")
    den = float(np.sum(y * y))
    if den == 0:
        return 0.0
    return float(np.sum(x * y)) / den
