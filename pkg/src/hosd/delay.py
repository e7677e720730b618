"""
Partial delay filters and iterated realignment.

Each record contributes a partial delay filter obtained by contracting
its spectrum against the HOS weighting filter.  For a record holding a
feature at lag ``tau`` the partial filter is, up to noise, the matched
filter for the feature advanced by ``tau``.  Averaging the partial
filters after compensating each by its current lag estimate, filtering
every record with the average and taking the output maximum as the new
lag gives an iteration that pulls the records into alignment.

Sign convention: DFTs follow numpy (``exp(-i w t)`` forward), lags are
the sample index of the detection peak in each record, and phase
compensation multiplies partial ``j`` by ``exp(-2 pi i w tau_j / T)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .hos import (DEFAULT_DELTA_W, DEFAULT_NORMALIZATION, HosFilter, RecordEnsemble,
                  SpectrumSet, _as_spectra, hos_filter, signed_bins)


@dataclass
class IterConfig:
    """Settings for :func:`iterate_alignment`."""

    order: int = 3
    max_iterations: int = 25
    convergence_fraction: float = 0.02
    normalization: str = DEFAULT_NORMALIZATION
    delta_w: int = DEFAULT_DELTA_W
    bandwidth: int | None = None
    # zero-pad records to 2T so that realignment shifts are linear, not circular
    linear: bool = False
    center: bool = True

    def __post_init__(self):
        if self.order not in (3, 4):
            raise InvalidInputError(f"order must be 3 or 4, got {self.order}")
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be >= 1")
        if not 0 <= self.convergence_fraction < 1:
            raise InvalidInputError("convergence_fraction must lie in [0, 1)")


@dataclass
class DelayFilter:
    """Average partial delay filter in both domains."""

    freq: np.ndarray
    time: np.ndarray
    iteration: int = 0

    @classmethod
    def from_freq(cls, G, iteration: int = 0) -> "DelayFilter":
        G = np.asarray(G, dtype=complex)
        return cls(G, np.fft.ifft(G).real, iteration)

    @property
    def T(self) -> int:
        return self.freq.size


@dataclass
class DelayEstimates:
    lags: np.ndarray
    peak_values: np.ndarray
    signs: np.ndarray
    changed_count: int = 0

    def __post_init__(self):
        self.lags = np.asarray(self.lags, dtype=int)
        self.peak_values = np.asarray(self.peak_values, dtype=float)
        self.signs = np.asarray(self.signs, dtype=int)


@dataclass
class AlignmentResult:
    filter: DelayFilter
    delays: DelayEstimates
    lag_history: np.ndarray
    changed_counts: list[int]
    converged: bool
    hos: HosFilter | None = field(default=None, repr=False)
    # per-record partial delay spectra; the filter is their average
    # phase-compensated by ``delays.lags``
    partials: np.ndarray | None = field(default=None, repr=False)

    @property
    def iterations(self) -> int:
        return len(self.changed_counts)

    def __iter__(self):
        # unpacks as (filter, delays, history)
        return iter((self.filter, self.delays, self.lag_history))


def partial_delay_spectrum(Xj, H: HosFilter, hermitian: bool = False) -> np.ndarray:
    """``G_j[w1] = sum_{w2} X_j[w2] X_j*[w1+w2] H(w1, w2)`` (K=3), and the
    corresponding double sum for K=4.  Bins of ``w1`` outside the grid get 0."""
    return partial_delay_spectra(np.asarray(Xj)[None, :], H, hermitian)[0]


def partial_delay_spectra(spectra, H: HosFilter, hermitian: bool = False) -> np.ndarray:
    """Partial delay spectra for every record, shape (L, T).

    With ``hermitian=True`` only ``w1 >= 0`` is evaluated and the rest filled
    by conjugate symmetry; valid when ``H(-w1,-w2) = H*(w1,w2)``, as for
    every H estimated from real records.
    """
    X = _as_spectra(spectra)
    L, T = X.shape
    if T != H.T:
        raise InvalidInputError(f"spectrum length {T} does not match filter grid T={H.T}")
    bins, order = H.bins, H.order
    n = bins.size
    rows = np.arange(n)
    if hermitian and order == 3:
        rows = np.flatnonzero((signed_bins(bins, T) >= 0) | (bins == T // 2) if T % 2 == 0
                              else signed_bins(bins, T) >= 0)
    out = np.zeros((L, T), complex)
    Hr = H.values[rows]
    if order == 3:
        sumidx = (bins[rows][:, None] + bins[None, :]) % T
        for j in range(L):
            x = X[j]
            out[j, bins[rows]] = (np.conj(x[sumidx]) * Hr) @ x[bins]
    else:
        sumidx = (bins[rows][:, None, None] + bins[None, :, None] + bins[None, None, :]) % T
        for j in range(L):
            x = X[j]
            xb = x[bins]
            out[j, bins[rows]] = np.einsum("abc,b,c->a", np.conj(x[sumidx]) * Hr, xb, xb)
    if rows.size < n:
        missing = np.setdiff1d(bins, bins[rows])
        out[:, missing] = np.conj(out[:, (-missing) % T])
    return out


def _phase(lags, T: int) -> np.ndarray:
    w = np.arange(T)
    return np.exp(-2j * np.pi * np.outer(np.asarray(lags, float), w) / T)


def average_delay_filter(partials, lags, iteration: int = 0) -> DelayFilter:
    """Phase-compensated average ``(1/L) sum_j exp(-i w tau_j) G_j[w]``."""
    P = np.asarray(partials, dtype=complex)
    if P.ndim == 1:
        P = P[None, :]
    lags = np.asarray(lags.lags if isinstance(lags, DelayEstimates) else lags)
    L, T = P.shape
    if lags.shape != (L,):
        raise InvalidInputError(f"expected {L} lags, got shape {lags.shape}")
    if np.any(lags < 0) or np.any(lags >= T):
        raise InvalidInputError("lags must lie in [0, T)")
    G = np.mean(_phase(lags, T) * P, axis=0)
    return DelayFilter.from_freq(G, iteration)


def filter_outputs(g: DelayFilter | np.ndarray, spectra) -> np.ndarray:
    """Circular filter outputs ``g * x_j`` for every record, shape (L, T)."""
    G = g.freq if isinstance(g, DelayFilter) else np.asarray(g)
    X = _as_spectra(spectra)
    return np.fft.ifft(G[None, :] * X, axis=1).real


def _peaks(r: np.ndarray, order: int):
    score = np.abs(r) if order % 2 == 0 else r
    lags = np.argmax(score, axis=-1)
    vals = np.take_along_axis(r, lags[..., None], axis=-1)[..., 0]
    if order % 2 == 0:
        signs = np.where(vals < 0, -1, 1)
    else:
        signs = np.ones_like(lags)
    return lags, vals, signs


def detect_peak(g: DelayFilter, x, order: int = 3):
    """Lag of the maximum of ``g * x`` (maximum absolute value for even order).

    Returns ``(lag, peak_value, sign)``; ties go to the smallest index.
    """
    x = np.asarray(x, dtype=float)
    if x.size != g.T:
        raise InvalidInputError(f"record length {x.size} does not match filter length {g.T}")
    r = filter_outputs(g, np.fft.fft(x)[None, :])[0]
    lag, val, sign = _peaks(r, order)
    return int(lag), float(val), int(sign)


def _records(ensemble) -> np.ndarray:
    if isinstance(ensemble, RecordEnsemble):
        return ensemble.records
    rec = np.asarray(ensemble, dtype=float)
    return rec[None, :] if rec.ndim == 1 else rec


def circular_centroid(g: np.ndarray) -> int:
    """Sample index of the circular centroid of ``g**2``."""
    T = g.size
    z = np.sum(g**2 * np.exp(2j * np.pi * np.arange(T) / T))
    if abs(z) == 0:
        return 0
    return int(np.round(np.angle(z) * T / (2 * np.pi))) % T


def iterate_alignment(ensemble, config: IterConfig | None = None, hos: HosFilter | None = None,
                      spectra: SpectrumSet | np.ndarray | None = None) -> AlignmentResult:
    """Estimate per-record lags by iterated realignment.

    The HOS filter is estimated once: the auto-spectrum estimates are
    invariant to circular shifts of the records, so re-estimating them on
    realigned records reproduces the same H.  Realignment then only enters
    through the phase factors applied to the partial filters.

    Iteration ``m`` averages the partial filters with the current lags,
    filters every record with the average and moves each lag to the output
    maximum.  It stops once the fraction of records whose lag changed is at
    most ``config.convergence_fraction`` or after ``config.max_iterations``.
    The returned filter is the average re-formed with the final lags.
    With ``config.center`` it is circularly shifted so its
    energy centroid sits at t=0 and the lags are shifted to match; this
    pins the otherwise arbitrary common offset of the lags to the data.
    """
    cfg = config or IterConfig()
    rec = _records(ensemble)
    if cfg.linear:
        rec = np.concatenate([rec, np.zeros_like(rec)], axis=1)
        spectra = None
    L, T = rec.shape
    X = _as_spectra(spectra) if spectra is not None else np.fft.fft(rec, axis=1)
    if hos is None:
        hos = hos_filter(X, cfg.normalization, cfg.delta_w, cfg.order, cfg.bandwidth)
    partials = partial_delay_spectra(X, hos, hermitian=True)

    lags = np.zeros(L, dtype=int)
    signs = np.ones(L, dtype=int)
    history = [lags.copy()]
    changed_counts = []
    converged = False
    tol = cfg.convergence_fraction * L
    even = cfg.order % 2 == 0
    for m in range(cfg.max_iterations):
        # even orders: partials of sign-flipped occurrences are flipped back
        g = average_delay_filter(partials * signs[:, None] if even else partials, lags, iteration=m)
        r = filter_outputs(g, X)
        # tau^(m+1) = tau^(m) + argmax g*x_j(t + tau^(m)) reduces to argmax g*x_j
        new, _, signs = _peaks(r, cfg.order)
        changed = int(np.count_nonzero(new != lags))
        lags = new
        history.append(lags.copy())
        changed_counts.append(changed)
        if changed <= tol:
            converged = True
            break

    # final filter re-averaged with the final lags
    if even:
        partials = partials * signs[:, None]
    g = average_delay_filter(partials, lags, iteration=len(changed_counts))
    if cfg.center:
        c = circular_centroid(g.time)
        g = DelayFilter.from_freq(g.freq * np.exp(2j * np.pi * np.arange(T) * c / T), g.iteration)
        lags = (lags - c) % T
    r = filter_outputs(g, X)
    vals = r[np.arange(L), lags]
    delays = DelayEstimates(lags, vals, signs, changed_counts[-1])
    return AlignmentResult(g, delays, np.array(history), changed_counts, converged, hos, partials)
