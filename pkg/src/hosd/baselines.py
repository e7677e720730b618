"""
Second-order delay estimators used as comparisons.

``pairwise_xcorr_delays`` + ``svd_phase_delays``: lags from the maxima of
all pairwise circular cross-correlations, encoded as unit phasors and
factorized through the leading singular vector.

``woody_align``: iterative template matching against the delay-compensated
ensemble average.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .delay import DelayEstimates, _records
from .errors import InvalidInputError


@dataclass
class PairwiseDelayMatrix:
    lags: np.ndarray
    phase: np.ndarray
    T: int


@dataclass
class SvdDelays:
    lags: np.ndarray
    singular_values: np.ndarray
    low_confidence: bool


@dataclass
class WoodyResult:
    delays: DelayEstimates
    template: np.ndarray
    iterations: int
    converged: bool
    mean_peak_correlation: float


def _xcorr_argmax(Xa: np.ndarray, Xb: np.ndarray) -> np.ndarray:
    # c(t) = sum_s xb(s) xa(s + t) peaks at t = tau_a - tau_b
    c = np.fft.ifft(Xa * np.conj(Xb), axis=-1).real
    return np.argmax(c, axis=-1)


def pairwise_xcorr_delays(ensemble) -> PairwiseDelayMatrix:
    """``lags[j, k]`` = argmax of the circular cross-correlation of records j
    and k, i.e. ``tau_j - tau_k`` (mod T); ``phase = exp(2 pi i lags / T)``."""
    rec = _records(ensemble)
    L, T = rec.shape
    if L < 2:
        raise InvalidInputError("need at least 2 records")
    X = np.fft.fft(rec, axis=1)
    lags = np.zeros((L, L), dtype=int)
    for j in range(L):
        lags[j] = _xcorr_argmax(X[j][None, :], X)
    return PairwiseDelayMatrix(lags, np.exp(2j * np.pi * lags / T), T)


def svd_phase_delays(phase, T: int | None = None) -> SvdDelays:
    """Lags from the phases of the leading left singular vector of ``phase``.

    Lags are defined up to a common offset.  ``low_confidence`` is set when
    the two largest singular values are within a factor 1.05.
    """
    if isinstance(phase, PairwiseDelayMatrix):
        T = phase.T if T is None else T
        phase = phase.phase
    if T is None:
        raise InvalidInputError("record length T is required")
    Phi = np.asarray(phase, dtype=complex)
    U, s, _ = np.linalg.svd(Phi)
    u = U[:, 0]
    lags = np.round(T * np.angle(u) / (2 * np.pi)).astype(int) % T
    low = s.size > 1 and s[0] < 1.05 * s[1]
    if low:
        warnings.warn("leading singular subspace is degenerate; SVD delays are low-confidence",
                      RuntimeWarning, stacklevel=2)
    return SvdDelays(lags, s, bool(low))


def svd_delays(ensemble) -> np.ndarray:
    """Convenience: pairwise cross-correlation followed by SVD phase recovery."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return svd_phase_delays(pairwise_xcorr_delays(ensemble)).lags


def woody_align(ensemble, max_iter: int = 50) -> WoodyResult:
    """Woody's iterative template alignment.

    Starts from the plain ensemble average; each pass aligns every record to
    the template by its cross-correlation maximum and rebuilds the template
    from the aligned records, until no lag changes or ``max_iter`` passes.
    """
    rec = _records(ensemble)
    L, T = rec.shape
    if L < 2:
        raise InvalidInputError("need at least 2 records")
    X = np.fft.fft(rec, axis=1)
    lags = np.zeros(L, dtype=int)
    template = rec.mean(axis=0)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        used = template
        F = np.fft.fft(used)
        c = np.fft.ifft(X * np.conj(F)[None, :], axis=1).real
        new = np.argmax(c, axis=1)
        peaks = c[np.arange(L), new]
        changed = int(np.count_nonzero(new != lags))
        lags = new
        template = np.mean([np.roll(rec[j], -lags[j]) for j in range(L)], axis=0)
        if changed == 0:
            converged = True
            break
    norms = np.linalg.norm(rec, axis=1) * np.linalg.norm(used)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(norms > 0, peaks / norms, 0.0)
    delays = DelayEstimates(lags, corr, np.ones(L, dtype=int), changed)
    return WoodyResult(delays, template, it, converged, float(np.mean(corr)))
