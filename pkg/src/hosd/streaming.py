"""
Running-average HOSD for a stream of records.

The spectrum grid ``B``, the root denominator ``sqrt(D)`` and the delay
filter ``G`` are exponentially weighted averages over incoming records.
Each record is first filtered with the current ``g``; the lag of the output
maximum compensates its partial filter before it enters ``G``.  Updates are
gated: when the output maximum stays below ``theta`` the learning rates
drop to ``lambda[0]`` and ``alpha[0]`` (0 by default, freezing the state).

Order 3 only.  The state is mutated in place by :func:`push_record`, which
must be called serially.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .delay import DelayFilter, _peaks, partial_delay_spectra
from .errors import InvalidInputError
from .hos import (DEFAULT_DELTA_W, BispectrumGrid, HosFilter, _accumulate, apply_quasi_cumulant_window,
                  grid_bins, make_hos_filter)
from .reconstruction import select_threshold

DEFAULT_RATE = 0.05
DEFAULT_BUFFER = 32


@dataclass
class DetectionEvent:
    detected: bool
    lag: int
    score: float
    theta: float
    index: int


@dataclass
class StreamState:
    """Running estimates plus the gate settings.

    ``lam`` and ``alpha`` are ``(closed, open)`` rate pairs indexed by the
    gate value.  ``theta=None`` selects the adaptive threshold: the first
    ``buffer_size`` records pass the gate unconditionally and fill a
    calibration buffer with their filter outputs; afterwards ``theta`` is
    re-selected after every record from the outputs of the last
    ``buffer_size`` records whose gate stayed closed.  A float ``theta``
    is used as given.
    """

    T: int
    bandwidth: int | None = None
    lam: tuple[float, float] = (0.0, DEFAULT_RATE)
    alpha: tuple[float, float] = (0.0, DEFAULT_RATE)
    theta: float | None = None
    false_positive_rate: float = 0.05
    buffer_size: int = DEFAULT_BUFFER
    delta_w: int = DEFAULT_DELTA_W
    records_seen: int = 0
    bins: np.ndarray = field(init=False, repr=False)
    B_run: np.ndarray = field(init=False, repr=False)
    sqrtD_run: np.ndarray = field(init=False, repr=False)
    G_run: np.ndarray = field(init=False, repr=False)
    H: HosFilter | None = field(init=False, default=None, repr=False)
    calibration: deque = field(init=False, repr=False)
    adaptive: bool = field(init=False)

    def __post_init__(self):
        if self.T < 8:
            raise InvalidInputError("T must be >= 8")
        self.lam = tuple(float(v) for v in self.lam)
        self.alpha = tuple(float(v) for v in self.alpha)
        for name, pair in (("lam", self.lam), ("alpha", self.alpha)):
            if len(pair) != 2 or not all(0.0 <= v <= 1.0 for v in pair):
                raise InvalidInputError(f"{name} must be a pair of rates in [0, 1]")
        if self.buffer_size < 1:
            raise InvalidInputError("buffer_size must be >= 1")
        self.bins = grid_bins(self.T, self.bandwidth)
        n = self.bins.size
        self.B_run = np.zeros((n, n), complex)
        self.sqrtD_run = np.zeros((n, n))
        self.G_run = np.zeros(self.T, complex)
        self.calibration = deque(maxlen=self.buffer_size)
        self.adaptive = self.theta is None
        if self.adaptive:
            self.theta = -math.inf
        elif math.isnan(self.theta):
            raise InvalidInputError("theta must not be NaN")

    @property
    def filter(self) -> DelayFilter:
        return DelayFilter.from_freq(self.G_run)

    def snapshot(self) -> dict:
        """Copies of the running estimates, safe to read while pushing continues."""
        return {"B_run": self.B_run.copy(), "sqrtD_run": self.sqrtD_run.copy(),
                "G_run": self.G_run.copy(), "theta": float(self.theta),
                "records_seen": self.records_seen}


def detection_gate(r, theta: float) -> int:
    """1 when ``max r > theta``, else 0."""
    r = np.asarray(r, dtype=float)
    return int(r.size > 0 and float(r.max()) > theta)


def _running_filter(state: StreamState) -> HosFilter:
    grid = BispectrumGrid(state.B_run, state.bins, state.T)
    H = make_hos_filter(grid, state.sqrtD_run**2, normalization="magnitude_weighted")
    return apply_quasi_cumulant_window(H, state.delta_w)


def push_record(state: StreamState, x) -> tuple[DetectionEvent, StreamState]:
    """Filter ``x`` with the current delay filter, gate, then update the state.

    The first record always updates with rates 1 (bootstrap), its lag is 0.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (state.T,):
        raise InvalidInputError(f"record must have shape ({state.T},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("record contains non-finite values")
    X = np.fft.fft(x)
    r = np.fft.ifft(state.G_run * X).real
    lag, score, _ = _peaks(r, 3)
    lag, score = int(lag), float(score)
    index = state.records_seen
    theta = float(state.theta)
    if index == 0:
        delta, lam, alpha = 1, 1.0, 1.0
    else:
        burn_in = state.adaptive and index <= state.buffer_size
        delta = 1 if burn_in else detection_gate(r, theta)
        lam, alpha = state.lam[delta], state.alpha[delta]
        if burn_in or (state.adaptive and not delta):
            state.calibration.append(r)

    if lam > 0:
        acc = _accumulate(X[None, :], state.bins, 3, {"B", "A"})
        state.B_run = (1 - lam) * state.B_run + lam * acc["B"]
        state.sqrtD_run = (1 - lam) * state.sqrtD_run + lam * acc["A"]
        state.H = None
    if alpha > 0:
        if state.H is None:
            state.H = _running_filter(state)
        P = partial_delay_spectra(X[None, :], state.H, hermitian=True)[0]
        P = P * np.exp(-2j * np.pi * np.arange(state.T) * lag / state.T)
        state.G_run = (1 - alpha) * state.G_run + alpha * P
    state.records_seen += 1
    if state.adaptive and state.records_seen > state.buffer_size and state.calibration:
        state.theta = select_threshold(np.concatenate(state.calibration), state.false_positive_rate).theta
    return DetectionEvent(bool(delta), lag, score, theta, index), state


def run_stream(records, state: StreamState | None = None, **kwargs) -> tuple[list[DetectionEvent], StreamState]:
    """Push every row of ``records`` in order."""
    rec = np.atleast_2d(np.asarray(records, dtype=float))
    if state is None:
        state = StreamState(rec.shape[1], **kwargs)
    events = []
    for x in rec:
        ev, state = push_record(state, x)
        events.append(ev)
    return events, state
