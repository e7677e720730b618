"""Acceptance criteria 1-9.  Each test prints one PASS/FAIL line."""

import time

import numpy as np
import pytest

from conftest import brute_bispectrum
from hosd.cli import run_benchmark, summarize_benchmark
from hosd.decomposition import hosd_decompose
from hosd.delay import iterate_alignment
from hosd.hos import estimate_bispectrum
from hosd.reconstruction import recover_waveform, select_threshold
from hosd.streaming import run_stream
from hosd.synthesis import SynthesisSpec, circular_delay_correlation, simulate, simulate_mixture

INBAND_GRID = [5.0, -1.25, -7.5, -13.75, -20.0]
OUTBAND_GRID = [5.0, 0.0, -5.0, -10.0, -15.0]


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail
    return emit


def best_match(a, b):
    c = np.fft.ifft(np.fft.fft(a) * np.conj(np.fft.fft(b))).real
    return np.max(np.abs(c)) / (np.linalg.norm(a) * np.linalg.norm(b))


def test_criterion_1_bispectrum_oracle(report):
    rng = np.random.default_rng(1)
    worst = 0.0
    elapsed = 0.0
    for _ in range(50):
        x = rng.standard_normal((rng.integers(1, 5), rng.integers(8, 33)))
        start = time.perf_counter()
        B = estimate_bispectrum(np.fft.fft(x, axis=1)).values
        elapsed += time.perf_counter() - start
        ref = brute_bispectrum(x)
        worst = max(worst, np.max(np.abs(B - ref)) / np.max(np.abs(ref)))
    report(1, worst <= 1e-10 and elapsed < 5, f"max rel err {worst:.2e}, {elapsed:.2f} s")


def test_criterion_2_symmetry_and_shift(report):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        T = int(rng.integers(8, 65))
        x = rng.standard_normal(T)
        B = estimate_bispectrum(np.fft.fft(x)[None, :]).values
        scale = np.max(np.abs(B))
        neg = (-np.arange(T)) % T
        Bs = estimate_bispectrum(np.fft.fft(np.roll(x, rng.integers(1, T)))[None, :]).values
        worst = max(worst,
                    np.max(np.abs(B - B.T)) / scale,
                    np.max(np.abs(B[np.ix_(neg, neg)] - np.conj(B))) / scale,
                    np.max(np.abs(Bs - B)) / scale)
    report(2, worst <= 1e-10, f"max rel err {worst:.2e}")


def test_criterion_3_third_moment_identity(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        T = int(rng.integers(8, 129))
        x = rng.standard_normal(T) + rng.exponential(size=T)
        B = estimate_bispectrum(np.fft.fft(x)[None, :]).values
        lhs = np.mean(x**3)
        rhs = np.sum(B).real / T**3
        worst = max(worst, abs(lhs - rhs) / abs(lhs))
    report(3, worst <= 1e-8, f"max rel err {worst:.2e}")


def test_criterion_4_single_transient(report):
    start = time.perf_counter()
    iters, dcorr, wcorr = [], [], []
    for seed in range(20):
        ens, truth = simulate(SynthesisSpec(inband_snr_db=9.5, outband_snr_db=9.5, seed=seed))
        res = iterate_alignment(ens)
        iters.append(res.iterations)
        dcorr.append(circular_delay_correlation(truth.true_delays, res.delays.lags, ens.T))
        wcorr.append(best_match(recover_waveform(ens.records, res.delays), truth.waveform))
    elapsed = time.perf_counter() - start
    med_it, med_d, med_w = np.median(iters), np.median(dcorr), np.median(wcorr)
    ok = med_it <= 10 and med_d > 0.95 and med_w > 0.9 and elapsed < 60
    report(4, ok, f"median iterations {med_it:g}, delay corr {med_d:.4f}, waveform corr {med_w:.4f}, "
                  f"{elapsed:.1f} s")


def test_criterion_5_noise_grid(report):
    start = time.perf_counter()
    rows = run_benchmark(INBAND_GRID, OUTBAND_GRID, [None], range(40))
    elapsed = time.perf_counter() - start
    med = {(m, i, o): v for m, i, o, _, _, v, *_ in summarize_benchmark(rows)}
    hosd_change = abs(med["hosd", 5.0, 5.0] - med["hosd", 5.0, -15.0])
    svd_low = min(med["svd", 5.0, o] for o in (-5.0, -10.0, -15.0))
    ok = hosd_change < 0.05 and svd_low < 0.5 and elapsed < 900
    report(5, ok, f"HOSD median change {hosd_change:.4f}, SVD min median {svd_low:.3f}, {elapsed:.0f} s")


def test_criterion_6_threshold_calibration(report):
    events = 0
    for seed in range(200):
        r = np.random.default_rng(seed).standard_normal(4096)
        events += select_threshold(r, false_positive_rate=0.05).theta < r.max()
    rate = events / 200
    report(6, abs(rate - 0.05) <= 0.03, f"event rate {rate:.3f}")


def test_criterion_7_two_sources(report):
    good = 0
    for seed in range(40):
        ens, truth = simulate_mixture(SynthesisSpec(inband_snr_db=5, outband_snr_db=5, seed=seed))
        res = hosd_decompose(ens)
        if len(res.components) != 2:
            continue
        C = np.array([[best_match(c.waveform, w) for w in truth.extra["waveforms"]] for c in res.components])
        good += C.max(axis=0).min() > 0.85 and C.max(axis=1).min() > 0.85
    report(7, good >= 32, f"{good}/40 seeds with 2 matched components")


def test_criterion_8_streaming_matches_batch(report):
    ens, _ = simulate(SynthesisSpec(L=200, inband_snr_db=5, outband_snr_db=5, seed=0))
    events, _ = run_stream(ens.records, lam=(0.0, 0.05), alpha=(0.0, 0.05))
    stream_lags = np.array([e.lag for e in events[-50:]])
    batch_lags = iterate_alignment(ens.records[-50:]).delays.lags
    corr = circular_delay_correlation(batch_lags, stream_lags, ens.T)
    report(8, corr > 0.9, f"circular correlation {corr:.4f}")


def test_criterion_9_null_safety(report):
    empty = sum(len(hosd_decompose(np.random.default_rng(seed).standard_normal((64, 512))).components) == 0
                for seed in range(40))
    report(9, empty >= 36, f"{empty}/40 noise ensembles with no components")
