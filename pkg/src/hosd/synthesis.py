"""
Synthetic test signals for delay-recovery experiments.

A transient is Gaussian-windowed white noise passed through an ideal
bandpass.  Ensembles embed the transient at uniform random circular
delays in two kinds of noise: in-band noise shares the transient's
passband, out-band noise occupies the complementary band (optionally
restricted by a further low-pass, which is the replication preset).

All randomness flows from a PCG64 generator seeded by ``spec.seed`` so
results are reproducible across machines.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidInputError, UndefinedStatisticError
from .hos import RecordEnsemble

RNG_ALGORITHM = "PCG64"


def rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent PCG64 stream ``stream`` derived from ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass
class SynthesisSpec:
    T: int = 512
    L: int = 64
    passband: tuple[float, float] = (0.01, 0.1)
    gauss_window_std: float = 20.0
    inband_snr_db: float = math.inf
    outband_snr_db: float = math.inf
    noise_kind: str = "gaussian"
    seed: int = 0
    # "lowpass": out-band noise is low-passed below ``outband_cutoff``;
    # "complementary": out-band noise fills the whole complement of the passband
    outband_mode: str = "lowpass"
    outband_cutoff: float = 0.1

    def __post_init__(self):
        low, high = self.passband
        self.passband = (float(low), float(high))
        if not 0 < low < high <= 0.5:
            raise InvalidInputError(f"passband must satisfy 0 < low < high <= 0.5, got {self.passband}")
        if self.T < 8 or self.L < 1:
            raise InvalidInputError("need T >= 8 and L >= 1")
        for snr in (self.inband_snr_db, self.outband_snr_db):
            if math.isnan(snr) or snr == -math.inf:
                raise InvalidInputError("SNR values must be finite or +inf")
        if self.noise_kind not in ("gaussian", "chi2_filtered"):
            raise InvalidInputError(f"unknown noise_kind {self.noise_kind!r}")
        if self.outband_mode not in ("lowpass", "complementary"):
            raise InvalidInputError(f"unknown outband_mode {self.outband_mode!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passband"] = list(self.passband)
        d["rng"] = RNG_ALGORITHM
        return d


@dataclass
class GroundTruth:
    waveform: np.ndarray
    true_delays: np.ndarray
    noise_realization_seed: int
    inband_energy_ratio: float = math.nan
    outband_energy_ratio: float = math.nan
    extra: dict = field(default_factory=dict)


def band_mask(T: int, low: float, high: float) -> np.ndarray:
    """Boolean mask over FFT bins with ``low <= |f| <= high`` (cycles/sample)."""
    f = np.abs(np.fft.fftfreq(T))
    return (f >= low) & (f <= high)


def lowpass_mask(T: int, cutoff: float) -> np.ndarray:
    return np.abs(np.fft.fftfreq(T)) <= cutoff


def bandwidth_passband(ratio: float, low: float = 0.01) -> tuple[float, float]:
    """Passband whose width is ``ratio`` times the lower edge."""
    return (low, low * (1.0 + ratio))


def _apply_mask(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.fft.ifft(np.fft.fft(x, axis=-1) * mask, axis=-1).real


def make_transient(spec: SynthesisSpec) -> np.ndarray:
    """Gaussian-windowed white noise, ideal bandpass, then zero mean and unit variance."""
    rng = rng_for(spec.seed, 0)
    T = spec.T
    t = np.arange(T)
    window = np.exp(-0.5 * ((t - T // 2) / spec.gauss_window_std) ** 2)
    x = rng.standard_normal(T) * window
    x = _apply_mask(x, band_mask(T, *spec.passband))
    x = x - x.mean()
    return x / x.std()


def squared_gaussian_noise(n, rng: np.random.Generator) -> np.ndarray:
    """Raw chi-square(1) white noise (squared standard normals), not centered."""
    return rng.standard_normal(n) ** 2


def random_phase_response(T: int, rng: np.random.Generator, smooth_bins: int | None = None) -> np.ndarray:
    """Random phase response over FFT bins, smoothed across frequency.

    Unit phasors with uniform random angle are averaged with a circular
    moving window of ``smooth_bins`` (default ``T // 32``) and the angle of
    the result is kept.  Smooth phase keeps the impulse response compact in
    time.  The response is odd-symmetric so filters built on it are real.
    """
    width = max(1, smooth_bins if smooth_bins is not None else T // 32)
    z = np.exp(1j * rng.uniform(-np.pi, np.pi, T))
    kernel = np.ones(width) / width
    pad = np.concatenate([z[-width:], z, z[:width]])
    zs = np.convolve(pad, kernel, mode="same")[width:width + T]
    phase = np.angle(zs)
    k = np.arange(T)
    neg = (-k) % T
    half = k <= T // 2
    phase = np.where(half, phase, -phase[neg])
    phase[0] = 0.0
    if T % 2 == 0:
        phase[T // 2] = 0.0
    return phase


def nongaussian_noise(amplitude_spectrum, rng: np.random.Generator | int,
                      smooth_bins: int | None = None, phase: np.ndarray | None = None,
                      size: int | None = None) -> np.ndarray:
    """Skewed noise: centered unit-variance chi-square(1) white noise filtered by
    ``amplitude_spectrum`` with a randomized smooth phase response.

    ``size`` gives the number of independent records (returns shape
    (size, T)); a single record is returned when it is None.
    """
    if not isinstance(rng, np.random.Generator):
        rng = rng_for(int(rng), 2)
    A = np.asarray(amplitude_spectrum, dtype=float)
    T = A.size
    if phase is None:
        phase = random_phase_response(T, rng, smooth_bins)
    n = (1 if size is None else size, T)
    z = (squared_gaussian_noise(n, rng) - 1.0) / np.sqrt(2.0)
    y = np.fft.ifft(np.fft.fft(z, axis=-1) * (A * np.exp(1j * phase)), axis=-1).real
    return y[0] if size is None else y


def band_noise(spec: SynthesisSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Unscaled in-band and out-band noise, shape (L, T) each, from one white draw."""
    T, L = spec.T, spec.L
    inmask = band_mask(T, *spec.passband).astype(float)
    if spec.outband_mode == "lowpass":
        cutoff = max(spec.outband_cutoff, spec.passband[1])
        outer = lowpass_mask(T, cutoff).astype(float)
    else:
        outer = np.ones(T)
    if spec.noise_kind == "gaussian":
        w = rng.standard_normal((L, T))
        inband = _apply_mask(w, inmask)
        outband = _apply_mask(w - inband, outer)
    else:
        phase = random_phase_response(T, rng)
        z = (squared_gaussian_noise((L, T), rng) - 1.0) / np.sqrt(2.0)
        Z = np.fft.fft(z, axis=-1) * np.exp(1j * phase)
        inband = np.fft.ifft(Z * inmask, axis=-1).real
        outband = np.fft.ifft(Z * (outer - inmask), axis=-1).real
    return inband, outband


def _scale_to(noise: np.ndarray, signal_energy: float, snr_db: float):
    if snr_db == math.inf:
        return np.zeros_like(noise), 0.0
    energy = float(np.sum(noise**2))
    if energy == 0:
        return noise, 0.0
    target = signal_energy * 10 ** (-snr_db / 10)
    scaled = noise * math.sqrt(target / energy)
    return scaled, float(np.sum(scaled**2)) / signal_energy


def embed_ensemble(waveform, spec: SynthesisSpec) -> tuple[RecordEnsemble, GroundTruth]:
    """Records = circularly shifted waveform + in-band noise + out-band noise.

    Each band's noise is scaled so that its total energy over the ensemble
    relative to the total signal energy matches the requested SNR in dB.
    """
    f = np.asarray(waveform, dtype=float)
    if f.size != spec.T:
        raise InvalidInputError(f"waveform length {f.size} != T={spec.T}")
    rng = rng_for(spec.seed, 1)
    delays = rng.integers(0, spec.T, size=spec.L)
    signal = np.stack([np.roll(f, d) for d in delays])
    E = float(np.sum(signal**2))
    inband, outband = band_noise(spec, rng)
    inband, in_ratio = _scale_to(inband, E, spec.inband_snr_db)
    outband, out_ratio = _scale_to(outband, E, spec.outband_snr_db)
    records = signal + inband + outband
    truth = GroundTruth(f.copy(), delays, spec.seed, in_ratio, out_ratio)
    return RecordEnsemble(records), truth


def simulate(spec: SynthesisSpec) -> tuple[RecordEnsemble, GroundTruth]:
    """``make_transient`` followed by ``embed_ensemble``."""
    return embed_ensemble(make_transient(spec), spec)


def circular_delay_correlation(true_delays, estimated_delays, T: int) -> float:
    """Circular correlation coefficient of delays mapped to angles ``2 pi tau / T``.

    Uses the Jammalamadaka-SenGupta coefficient, which centers each sample
    on its circular mean and is therefore unchanged by a common offset.
    """
    a = 2 * np.pi * np.asarray(true_delays, dtype=float) / T
    b = 2 * np.pi * np.asarray(estimated_delays, dtype=float) / T
    if a.shape != b.shape:
        raise InvalidInputError("delay vectors differ in length")
    if a.size < 3:
        raise UndefinedStatisticError("circular correlation needs at least 3 records")
    sa = np.sin(a - np.angle(np.mean(np.exp(1j * a))))
    sb = np.sin(b - np.angle(np.mean(np.exp(1j * b))))
    den = math.sqrt(float(np.sum(sa**2) * np.sum(sb**2)))
    if den == 0:
        raise UndefinedStatisticError("circular correlation undefined for constant delays")
    return float(np.sum(sa * sb) / den)


def simulate_mixture(spec: SynthesisSpec, n_sources: int = 2,
                     min_separation: int | None = None) -> tuple[RecordEnsemble, GroundTruth]:
    """Ensemble holding ``n_sources`` distinct transients per record.

    Source ``k`` is drawn like :func:`make_transient` from its own stream.
    Delays are uniform and independent across sources, redrawn per record
    until every pair sits at least ``min_separation`` samples apart
    circularly (default six window standard deviations), so occurrences do
    not overlap.  Noise is scaled against the summed signal energy.
    ``truth.waveform`` is the first source; all sources and delays are in
    ``truth.extra["waveforms"]`` and ``truth.extra["delays"]`` (shape
    (n_sources, L)).
    """
    if n_sources < 1:
        raise InvalidInputError("n_sources must be >= 1")
    T, L = spec.T, spec.L
    sep = int(math.ceil(6 * spec.gauss_window_std)) if min_separation is None else int(min_separation)
    if n_sources * sep > T:
        raise InvalidInputError(f"{n_sources} sources cannot sit {sep} samples apart in T={T}")
    t = np.arange(T)
    window = np.exp(-0.5 * ((t - T // 2) / spec.gauss_window_std) ** 2)
    mask = band_mask(T, *spec.passband)
    waves = []
    for k in range(n_sources):
        x = _apply_mask(rng_for(spec.seed, 10 + k).standard_normal(T) * window, mask)
        x = x - x.mean()
        waves.append(x / x.std())
    rng = rng_for(spec.seed, 1)
    delays = np.zeros((n_sources, L), dtype=int)
    for j in range(L):
        while True:
            d = rng.integers(0, T, size=n_sources)
            gap = np.abs(d[:, None] - d[None, :]) % T
            gap = np.minimum(gap, T - gap) + T * np.eye(n_sources, dtype=int)
            if gap.min() >= sep:
                break
        delays[:, j] = d
    signal = np.zeros((L, T))
    for k in range(n_sources):
        signal += np.stack([np.roll(waves[k], d) for d in delays[k]])
    E = float(np.sum(signal**2))
    inband, outband = band_noise(spec, rng)
    inband, in_ratio = _scale_to(inband, E, spec.inband_snr_db)
    outband, out_ratio = _scale_to(outband, E, spec.outband_snr_db)
    truth = GroundTruth(waves[0].copy(), delays[0].copy(), spec.seed, in_ratio, out_ratio,
                        {"waveforms": np.stack(waves), "delays": delays})
    return RecordEnsemble(signal + inband + outband), truth
