"""
Higher-order spectral estimation.

Direct (FFT-based) estimators of the averaged bispectrum (K=3) and
trispectrum (K=4) over an ensemble of records, the normalizing
denominators used to build bicoherence-style weights, the small-sample
bias term for magnitude-weighted bicoherence, and the HOS weighting
filter ``H`` with quasi-cumulant windowing.

Grids are indexed by DFT bin numbers (``0..T-1``, numpy FFT order).  A
grid may cover every bin on each axis (the default) or only the bins
with ``|w| <= W`` when a bandwidth cap is given.  The frequency argument
closing the product, ``w1 + ... + w_{K-1}``, is always looked up in the
full spectrum modulo ``T``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import get_window

from .errors import InvalidInputError

NORMALIZATIONS = ("bicoherence", "magnitude_weighted", "magnitude_weighted_bias_corrected")
DEFAULT_NORMALIZATION = "magnitude_weighted_bias_corrected"
DEFAULT_DELTA_W = 1
DEFAULT_K4_BANDWIDTH = 64

# Upper bound on complex elements held per accumulation chunk.
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class RecordEnsemble:
    """L real records of equal length T.

    ``records`` are used as given; ``taper`` names the window that has
    already been applied to them (see :func:`make_ensemble`).
    """

    records: np.ndarray
    sample_rate: float = 1.0
    taper: str = "none"

    def __post_init__(self):
        rec = np.asarray(self.records, dtype=float)
        if rec.ndim == 1:
            rec = rec[None, :]
        if rec.ndim != 2:
            raise InvalidInputError("records must be a 2-D array (L records x T samples)")
        if rec.shape[1] < 8:
            raise InvalidInputError(f"record length must be >= 8, got {rec.shape[1]}")
        if rec.shape[0] < 1:
            raise InvalidInputError("ensemble has no records")
        if not np.all(np.isfinite(rec)):
            raise InvalidInputError("records contain non-finite samples")
        object.__setattr__(self, "records", rec)

    @property
    def L(self) -> int:
        return self.records.shape[0]

    @property
    def T(self) -> int:
        return self.records.shape[1]


def make_ensemble(records, taper: str = "hann", sample_rate: float = 1.0) -> RecordEnsemble:
    """Apply ``taper`` to every record and wrap the result.

    ``taper`` is any window name understood by :func:`scipy.signal.get_window`
    (symmetric form), or ``"none"``.
    """
    rec = np.asarray(records, dtype=float)
    if rec.ndim == 1:
        rec = rec[None, :]
    if taper != "none":
        rec = rec * get_window(taper, rec.shape[1], fftbins=False)[None, :]
    return RecordEnsemble(rec, sample_rate=sample_rate, taper=taper)


def segment_record(x, segment_len: int, hop: int | None = None, taper: str = "hann",
                   sample_rate: float = 1.0) -> RecordEnsemble:
    """Cut one long record into overlapping windows of ``segment_len`` samples
    every ``hop`` samples (default half a segment), tapered by ``taper``.
    A tail shorter than a full segment is dropped."""
    x = np.asarray(x, dtype=float).ravel()
    hop = segment_len // 2 if hop is None else hop
    if segment_len < 8:
        raise InvalidInputError("segment_len must be >= 8")
    if hop < 1:
        raise InvalidInputError("hop must be >= 1")
    if x.size < segment_len:
        raise InvalidInputError(f"record of {x.size} samples is shorter than one segment ({segment_len})")
    starts = np.arange(0, x.size - segment_len + 1, hop)
    rec = np.stack([x[s:s + segment_len] for s in starts])
    return make_ensemble(rec, taper=taper, sample_rate=sample_rate)


@dataclass(frozen=True)
class SpectrumSet:
    """Per-record DFTs, shape (L, T)."""

    spectra: np.ndarray

    @property
    def L(self) -> int:
        return self.spectra.shape[0]

    @property
    def T(self) -> int:
        return self.spectra.shape[1]


@dataclass(frozen=True)
class BispectrumGrid:
    """Averaged K-th order spectrum on a (K-1)-dimensional bin grid.

    ``values[i, j]`` (K=3) is the estimate at bins ``(bins[i], bins[j])``.
    """

    values: np.ndarray
    bins: np.ndarray
    T: int
    order: int = 3
    count: int = 1


@dataclass(frozen=True)
class HosFilter:
    """HOS weighting filter H on the same grid as the spectrum it came from."""

    values: np.ndarray
    bins: np.ndarray
    T: int
    order: int = 3
    normalization: str = DEFAULT_NORMALIZATION
    quasi_cumulant_width: int | None = None
    meta: dict = field(default_factory=dict, compare=False)


def grid_bins(T: int, bandwidth: int | None = None) -> np.ndarray:
    """Bins on each grid axis: all ``T`` bins, or those with ``|w| <= bandwidth``."""
    if bandwidth is None or 2 * bandwidth + 1 >= T:
        return np.arange(T)
    if bandwidth < 0:
        raise InvalidInputError("bandwidth must be >= 0")
    return np.concatenate([np.arange(bandwidth + 1), np.arange(T - bandwidth, T)])


def signed_bins(bins, T: int) -> np.ndarray:
    """Map bin numbers (mod T) to signed frequencies in ``[-T//2, T//2)``."""
    return (np.asarray(bins) + T // 2) % T - T // 2


def fft_records(ensemble: RecordEnsemble) -> SpectrumSet:
    """DFT of every record (numpy sign convention, no normalization)."""
    rec = ensemble.records if isinstance(ensemble, RecordEnsemble) else np.asarray(ensemble, float)
    if rec.ndim == 1:
        rec = rec[None, :]
    if not np.all(np.isfinite(rec)):
        raise InvalidInputError("records contain non-finite samples")
    return SpectrumSet(np.fft.fft(rec, axis=-1))


def _as_spectra(spectra) -> np.ndarray:
    X = spectra.spectra if isinstance(spectra, SpectrumSet) else np.asarray(spectra)
    X = np.asarray(X, dtype=complex)
    if X.ndim == 1:
        X = X[None, :]
    return X


def _sum_index(bins: np.ndarray, T: int, order: int) -> np.ndarray:
    axes = np.ix_(*([bins] * (order - 1)))
    total = axes[0]
    for a in axes[1:]:
        total = total + a
    return total % T


def _negation_index(bins: np.ndarray, T: int) -> np.ndarray:
    pos = {int(b): i for i, b in enumerate(bins)}
    return np.array([pos[int((-b) % T)] for b in bins])


def _accumulate(X: np.ndarray, bins: np.ndarray, order: int, want: set[str]) -> dict:
    """Single pass over records accumulating products on the grid.

    Keys produced (all sums over records, not averages):
      ``B``  - sum of X(w1)...X(w_{K-1}) X*(w1+...)
      ``A``  - sum of |product|
      ``A2`` - sum of |product|^2
      ``Q2`` - sum of |X(w2)...X*(w1+...)|^2   (bicoherence denominator)
      ``P``  - sum of |X(w1)|^2 (1-D, along the first axis)
    Only rows with ``w1`` in the non-negative half are computed; the rest
    follow from conjugate symmetry of real-input spectra.
    """
    L, T = X.shape
    n = bins.size
    sb = signed_bins(bins, T)
    rows = np.flatnonzero(sb >= 0) if order == 3 else np.arange(n)
    if order == 3:
        rows = np.union1d(rows, np.flatnonzero(sb == -(T // 2)))
    sumidx = _sum_index(bins, T, order)[rows]
    shape = (n,) * (order - 1)
    out = {}
    if "B" in want:
        out["B"] = np.zeros(shape, complex)
    for key in ("A", "A2", "Q2"):
        if key in want:
            out[key] = np.zeros(shape)
    per_record = rows.size * n ** (order - 2)
    chunk = max(1, _CHUNK_ELEMENTS // max(per_record, 1))
    for start in range(0, L, chunk):
        Xc = X[start:start + chunk]
        Xb = Xc[:, bins]
        q = np.conj(Xc[:, sumidx])
        for k in range(order - 2):
            idx = [slice(None), None] + [None] * (order - 2)
            idx[2 + k] = slice(None)
            q = q * Xb[tuple(idx)]
        if "Q2" in want:
            out["Q2"][rows] += np.sum(np.abs(q) ** 2, axis=0)
        first = Xb[:, rows].reshape((Xc.shape[0], rows.size) + (1,) * (order - 2))
        p = first * q
        if "B" in want:
            out["B"][rows] += p.sum(axis=0)
        if "A" in want or "A2" in want:
            a = np.abs(p)
            if "A" in want:
                out["A"][rows] += a.sum(axis=0)
            if "A2" in want:
                out["A2"][rows] += (a * a).sum(axis=0)
    if order == 3 and rows.size < n:
        neg = _negation_index(bins, T)
        missing = np.setdiff1d(np.arange(n), rows)
        for key, arr in out.items():
            src = arr[neg[missing]][:, neg]
            arr[missing] = np.conj(src) if key == "B" else src
    if "P" in want:
        out["P"] = np.sum(np.abs(X[:, bins]) ** 2, axis=0)
    return out


def _check_order(order: int):
    if order not in (3, 4):
        raise InvalidInputError(f"order must be 3 or 4, got {order}")


def _default_bins(T: int, order: int, bandwidth):
    if order == 4 and bandwidth is None:
        bandwidth = DEFAULT_K4_BANDWIDTH
    return grid_bins(T, bandwidth)


def estimate_bispectrum(spectra, order: int = 3, bandwidth: int | None = None) -> BispectrumGrid:
    """Average of ``X(w1) X(w2) X*(w1+w2)`` over records (K=3), or the
    analogous 4-fold product for K=4."""
    _check_order(order)
    X = _as_spectra(spectra)
    L, T = X.shape
    bins = _default_bins(T, order, bandwidth)
    acc = _accumulate(X, bins, order, {"B"})
    return BispectrumGrid(acc["B"] / L, bins, T, order, L)


def _denominator_from(acc: dict, L: int, mode: str, order: int) -> np.ndarray:
    if mode == "bicoherence":
        P = acc["P"].reshape((-1,) + (1,) * (order - 2))
        return P * acc["Q2"] / L**2
    return (acc["A"] / L) ** 2


def estimate_denominator(spectra, mode: str = "magnitude_weighted", order: int = 3,
                         bandwidth: int | None = None) -> np.ndarray:
    """Normalizing denominator D on the grid.

    ``bicoherence``: ``(1/L^2) sum_i |X_i(w1)|^2 * sum_j |X_j(w2) X_j*(w1+w2)|^2``.
    ``magnitude_weighted`` (with or without bias correction):
    ``[(1/L) sum_j |X_j(w1) X_j(w2) X_j*(w1+w2)|]^2``.
    """
    _check_order(order)
    if mode not in NORMALIZATIONS:
        raise InvalidInputError(f"unknown normalization {mode!r}")
    X = _as_spectra(spectra)
    L, T = X.shape
    bins = _default_bins(T, order, bandwidth)
    want = {"P", "Q2"} if mode == "bicoherence" else {"A"}
    return _denominator_from(_accumulate(X, bins, order, want), L, mode, order)


def _epsilon_from(acc: dict) -> np.ndarray:
    A, A2 = acc["A"], acc["A2"]
    eps = np.ones_like(A)
    live = A > 0
    eps[live] = np.sqrt(A2[live]) / A[live]
    return eps


def bias_epsilon(spectra, order: int = 3, bandwidth: int | None = None) -> np.ndarray:
    """Inverse root effective degrees of freedom, ``sqrt(sum w^2) / sum w``,
    with weights ``w_j = |X_j(w1) X_j(w2) X_j*(w1+w2)|``.  Set to 1 where
    every weight is zero."""
    _check_order(order)
    X = _as_spectra(spectra)
    bins = _default_bins(X.shape[1], order, bandwidth)
    return _epsilon_from(_accumulate(X, bins, order, {"A", "A2"}))


def make_hos_filter(B: BispectrumGrid, D: np.ndarray, eps: np.ndarray | None = None,
                    reg: float | None = None, normalization: str | None = None) -> HosFilter:
    """Weighting filter from a spectrum estimate and its denominator.

    Without ``eps``: ``H = B* / (D + reg)``.  With ``eps`` (magnitude-weighted
    bias correction): ``H = (B*/sqrt(D)) * max(0, 1/sqrt(D) - eps/|B|)``.
    ``reg`` defaults to ``1e-12 * max(D)``.  ``H`` vanishes at ``w1 = 0``.
    """
    D = np.asarray(D, dtype=float)
    if D.shape != B.values.shape:
        raise InvalidInputError(f"grid shapes differ: {B.values.shape} vs {D.shape}")
    if eps is not None and np.shape(eps) != D.shape:
        raise InvalidInputError(f"grid shapes differ: {D.shape} vs {np.shape(eps)}")
    if reg is None:
        reg = 1e-12 * float(D.max()) if D.size else 0.0
        if reg <= 0:
            reg = np.finfo(float).tiny
    elif reg <= 0:
        raise InvalidInputError("reg must be positive")
    Bc = np.conj(B.values)
    if eps is None:
        H = Bc / (D + reg)
        normalization = normalization or "magnitude_weighted"
    else:
        root = np.sqrt(D + reg)
        mag = np.abs(B.values)
        weight = np.maximum(0.0, mag / root - np.asarray(eps)) / root
        H = np.zeros_like(Bc)
        live = mag > 0
        H[live] = Bc[live] / mag[live] * weight[live]
        normalization = normalization or "magnitude_weighted_bias_corrected"
    H[B.bins == 0] = 0.0
    return HosFilter(H, B.bins, B.T, B.order, normalization, None, {"reg": reg})


def quasi_cumulant_mask(bins, T: int, order: int, delta_w: int) -> np.ndarray:
    """Boolean grid, True where every partial sum of a strict subset (size
    <= K-2) of the K frequency arguments is more than ``delta_w`` bins from
    zero."""
    bins = np.asarray(bins)
    axes = list(np.ix_(*([bins] * (order - 1))))
    closing = -sum(axes)
    args = axes + [closing]
    keep = np.ones((bins.size,) * (order - 1), dtype=bool)
    for size in range(1, order - 1):
        for subset in itertools.combinations(range(order), size):
            s = sum(args[k] for k in subset)
            dist = np.abs(signed_bins(s % T, T))
            keep &= dist > delta_w
    return keep


def apply_quasi_cumulant_window(H: HosFilter, delta_w: int = DEFAULT_DELTA_W) -> HosFilter:
    """Zero H wherever a lower-order partial sum of frequencies lies within
    ``delta_w`` bins of zero.  For K=3 these are the bands around
    ``w1 = 0``, ``w2 = 0`` and ``w1 + w2 = 0``."""
    if delta_w < 0:
        raise InvalidInputError("delta_w must be >= 0")
    keep = quasi_cumulant_mask(H.bins, H.T, H.order, delta_w)
    return HosFilter(np.where(keep, H.values, 0.0), H.bins, H.T, H.order,
                     H.normalization, delta_w, dict(H.meta))


def hos_filter(spectra, normalization: str = DEFAULT_NORMALIZATION, delta_w: int = DEFAULT_DELTA_W,
               order: int = 3, bandwidth: int | None = None, reg: float | None = None) -> HosFilter:
    """Estimate H from spectra in one pass over the records.

    Equivalent to ``estimate_bispectrum`` + ``estimate_denominator`` (+
    ``bias_epsilon``) + ``make_hos_filter`` + ``apply_quasi_cumulant_window``.
    """
    _check_order(order)
    if normalization not in NORMALIZATIONS:
        raise InvalidInputError(f"unknown normalization {normalization!r}")
    X = _as_spectra(spectra)
    L, T = X.shape
    bins = _default_bins(T, order, bandwidth)
    want = {"B"}
    if normalization == "bicoherence":
        want |= {"P", "Q2"}
    else:
        want |= {"A"}
    if normalization == "magnitude_weighted_bias_corrected":
        want |= {"A2"}
    acc = _accumulate(X, bins, order, want)
    B = BispectrumGrid(acc["B"] / L, bins, T, order, L)
    D = _denominator_from(acc, L, normalization, order)
    eps = _epsilon_from(acc) if normalization == "magnitude_weighted_bias_corrected" else None
    H = make_hos_filter(B, D, eps, reg=reg, normalization=normalization)
    if delta_w is not None:
        H = apply_quasi_cumulant_window(H, delta_w)
    return H


def full_grid_values(grid) -> np.ndarray:
    """Scatter a (possibly bandwidth-capped) K=3 grid into a dense T x T array."""
    out = np.zeros((grid.T,) * (grid.order - 1), dtype=grid.values.dtype)
    out[np.ix_(*([grid.bins] * (grid.order - 1)))] = grid.values
    return out
