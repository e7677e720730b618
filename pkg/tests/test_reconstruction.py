import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hosd.delay import DelayEstimates, DelayFilter, filter_outputs, iterate_alignment
from hosd.errors import InvalidInputError, UndefinedStatisticError
from hosd.reconstruction import (fit_scale, reconstruct_component, recover_waveform, select_threshold,
                                 skewness_bound, subthreshold_skewness, threshold_window)
from hosd.synthesis import SynthesisSpec, make_transient, simulate


def _lags(lags):
    lags = np.asarray(lags)
    return DelayEstimates(lags, np.zeros(lags.size), np.ones(lags.size, dtype=int))


# ---------------------------------------------------------------- waveform

def test_recover_identical_records():
    x = np.random.default_rng(0).standard_normal(32)
    f = recover_waveform(np.tile(x, (5, 1)), _lags(np.zeros(5, int)))
    assert np.allclose(f, x, atol=1e-12)


def test_recover_exact_shifts():
    f = make_transient(SynthesisSpec(T=128, gauss_window_std=10))
    shifts = np.array([0, 3, 50, 127, 64])
    rec = np.stack([np.roll(f, s) for s in shifts])
    assert np.max(np.abs(recover_waveform(rec, _lags(shifts)) - f)) < 1e-10


def test_recover_signs_and_validation():
    f = np.random.default_rng(1).standard_normal(16)
    rec = np.stack([f, -f])
    d = DelayEstimates([0, 0], [0, 0], [1, -1])
    assert np.allclose(recover_waveform(rec, d), f)
    with pytest.raises(InvalidInputError):
        recover_waveform(rec, _lags([0]))


# ---------------------------------------------------------------- skewness

def test_subthreshold_skewness_examples():
    assert subthreshold_skewness(np.array([-1.0, 1.0, -1.0, 1.0])) == pytest.approx(0.0)
    assert subthreshold_skewness(np.array([0.0, 0.0, 3.0])) == pytest.approx(2 / 2**1.5)
    assert subthreshold_skewness(np.array([0.0, 0.0, 3.0, 100.0]), theta=3.0) == pytest.approx(2 / 2**1.5)
    r = np.random.default_rng(2).standard_normal(10**5)
    assert abs(subthreshold_skewness(r)) < 3 * math.sqrt(6 / 1e5)


def test_subthreshold_skewness_undefined():
    with pytest.raises(UndefinedStatisticError):
        subthreshold_skewness(np.array([1.0, 2.0]))
    with pytest.raises(UndefinedStatisticError):
        subthreshold_skewness(np.full(10, 4.0))
    with pytest.raises(UndefinedStatisticError):
        subthreshold_skewness(np.array([1.0, 2.0, 3.0, 4.0]), theta=1.5)


def test_skewness_bound_constant():
    assert skewness_bound(4096) == pytest.approx(1.6449 * math.sqrt(6 / 4096), rel=1e-4)
    assert skewness_bound(4096) == pytest.approx(1.64 * math.sqrt(6 / 4096), rel=3e-3)
    assert skewness_bound(4096, order=4) == pytest.approx(1.6449 * math.sqrt(24 / 4096), rel=1e-4)
    with pytest.raises(InvalidInputError):
        skewness_bound(100, 0.6)


# ---------------------------------------------------------------- threshold

def test_threshold_spike_on_background():
    r = np.random.default_rng(3).standard_normal(2048)
    background = r.max()
    r[100] = 50.0
    choice = select_threshold(r)
    assert background <= choice.theta < 50.0
    assert not choice.flagged


def test_threshold_constant_input_flagged():
    choice = select_threshold(np.full(100, 2.0))
    assert choice.flagged and choice.theta == 2.0


def _candidates(r, even=False):
    s = np.abs(r) if even else r
    c = np.unique(s)[::-1]
    return c[c >= 0]


@given(arrays(float, st.integers(20, 200), elements=st.floats(-5, 5)), st.booleans())
def test_threshold_boundary(r, spike):
    if spike:
        r = r.copy()
        r[0] = 40.0
    choice = select_threshold(r)
    if choice.flagged:
        return
    bound = choice.bound
    assert subthreshold_skewness(r, choice.theta) < bound
    larger = _candidates(r)
    larger = larger[larger > choice.theta]
    if larger.size:
        nxt = larger.min()
        try:
            assert subthreshold_skewness(r, nxt) >= bound
        except UndefinedStatisticError:
            pass


def test_threshold_matches_naive_scan():
    r = np.random.default_rng(4).gamma(2.0, size=300) - 2.0
    bound = skewness_bound(r.size)
    naive = None
    for theta in _candidates(r):
        try:
            if subthreshold_skewness(r, theta) < bound:
                naive = theta
                break
        except UndefinedStatisticError:
            continue
    assert select_threshold(r).theta == naive


def test_threshold_even_order_uses_abs():
    r = np.random.default_rng(5).standard_normal(4000)
    r[10] = -30.0
    choice = select_threshold(r, order=4)
    assert choice.theta < 30.0
    w = threshold_window(r, choice.theta, order=4)
    assert w[10] == -30.0


def test_threshold_null_event_rate_small():
    # a handful of seeds here; the 200-seed calibration is an acceptance criterion
    events = sum(select_threshold(np.random.default_rng(s).standard_normal(4096)).theta
                 < np.random.default_rng(s).standard_normal(4096).max() for s in range(40))
    assert events <= 8


# ---------------------------------------------------------------- reconstruction

def test_reconstruct_above_max_is_zero():
    x = np.random.default_rng(6).standard_normal(64)
    g = DelayFilter.from_freq(np.ones(64))
    assert np.all(reconstruct_component(x, g, x, theta=x.max() + 1) == 0)


def test_reconstruct_impulse_window_shifts_waveform():
    f = np.random.default_rng(7).standard_normal(32)
    x = np.zeros(32)
    x[9] = 2.0
    g = DelayFilter.from_freq(np.ones(32))
    y = reconstruct_component(f, g, x, theta=1.0)
    assert np.allclose(y, 2.0 * np.roll(f, 9))
    Y = reconstruct_component(f, g, np.stack([x, x]), theta=1.0)
    assert Y.shape == (2, 32)


def test_reconstruct_support_covers_event():
    ens, truth = simulate(SynthesisSpec(inband_snr_db=5, outband_snr_db=5, seed=2))
    res = iterate_alignment(ens)
    r = filter_outputs(res.filter, np.fft.fft(ens.records, axis=1))
    theta = select_threshold(r.ravel()).theta
    w = threshold_window(r, theta)
    # lags are peak positions; map the gauge so that they line up with the truth
    d = (res.delays.lags - truth.true_delays) % ens.T
    offset = np.bincount(d).argmax()
    hits = 0
    for j in range(ens.L):
        support = np.flatnonzero(w[j])
        tau = (truth.true_delays[j] + offset) % ens.T
        dist = np.abs((support - tau + ens.T // 2) % ens.T - ens.T // 2)
        hits += support.size > 0 and dist.min() <= 3
    assert hits >= 0.9 * ens.L


def test_reconstruction_locality():
    f = make_transient(SynthesisSpec(T=256, gauss_window_std=10))
    x = np.zeros(256)
    x[[40, 170]] = [1.0, 0.7]
    g = DelayFilter.from_freq(np.ones(256))
    y = reconstruct_component(f, g, x, theta=0.5)
    support_f = np.flatnonzero(np.abs(f) > 0.01 * np.abs(f).max())
    # effective support of f as a circular half-width about index 0
    half = np.max(np.minimum(support_f, 256 - support_f))
    big = np.flatnonzero(np.abs(y) > 0.01 * np.abs(y).max())
    for t in big:
        assert min(abs((t - 40 + 128) % 256 - 128), abs((t - 170 + 128) % 256 - 128)) <= half


# ---------------------------------------------------------------- scale

def test_fit_scale_examples():
    x = np.random.default_rng(8).standard_normal((3, 16))
    assert fit_scale(x, x) == pytest.approx(1.0)
    assert fit_scale(x, 2 * x) == pytest.approx(0.5)
    assert fit_scale(x, np.zeros_like(x)) == 0.0
    y = np.zeros((3, 16))
    y[:, :8] = 1.0
    noise = np.zeros((3, 16))
    noise[:, 8:] = np.random.default_rng(9).standard_normal((3, 8))
    assert abs(fit_scale(y + noise, y) - 1.0) < 1e-10
    with pytest.raises(InvalidInputError):
        fit_scale(x, x[:2])


@given(arrays(float, (3, 16), elements=st.floats(-5, 5)), arrays(float, (3, 16), elements=st.floats(-5, 5)))
def test_energy_reduction(x, y):
    a = fit_scale(x, y)
    assert np.sum((x - a * y) ** 2) <= np.sum(x**2) * (1 + 1e-12) + 1e-12


def _pipeline(records):
    res = iterate_alignment(records)
    f = recover_waveform(records, res.delays)
    r = filter_outputs(res.filter, np.fft.fft(records, axis=1))
    theta = select_threshold(r.ravel()).theta
    y = reconstruct_component(f, res.filter, records, theta)
    return f, fit_scale(records, y) * y


def test_sign_flip_consistency():
    ens, _ = simulate(SynthesisSpec(T=256, L=24, inband_snr_db=5, outband_snr_db=5, seed=1))
    f, y = _pipeline(ens.records)
    fn, yn = _pipeline(-ens.records)
    assert np.allclose(fn, -f, atol=1e-9)
    assert np.allclose(np.abs(yn), np.abs(y), atol=1e-9)
