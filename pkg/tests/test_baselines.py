import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hosd.baselines import pairwise_xcorr_delays, svd_delays, svd_phase_delays, woody_align
from hosd.delay import iterate_alignment
from hosd.errors import InvalidInputError
from hosd.synthesis import SynthesisSpec, circular_delay_correlation, make_transient, simulate


def _copies(shifts, T=128):
    f = make_transient(SynthesisSpec(T=T, passband=(0.02, 0.2), gauss_window_std=8))
    return np.stack([np.roll(f, s) for s in shifts])


def _same_up_to_offset(a, b, T):
    d = (np.asarray(a) - np.asarray(b)) % T
    return np.all(d == d[0])


def test_identical_records():
    m = pairwise_xcorr_delays(np.tile(np.random.default_rng(0).standard_normal(32), (4, 1)))
    assert np.all(m.lags == 0)
    assert np.allclose(m.phase, 1.0)


def test_shifted_pair_convention():
    rec = _copies([0, 9])
    m = pairwise_xcorr_delays(rec)
    assert m.lags[0, 1] == (0 - 9) % 128
    assert m.lags[1, 0] == 9


def test_antisymmetry_and_unit_modulus():
    ens, _ = simulate(SynthesisSpec(T=128, L=10, inband_snr_db=0, seed=1, passband=(0.02, 0.2),
                                    gauss_window_std=8))
    m = pairwise_xcorr_delays(ens)
    assert np.all((m.lags + m.lags.T) % 128 == 0)
    assert np.allclose(np.abs(m.phase), 1.0)


def test_noiseless_phase_matrix_rank_one():
    shifts = np.random.default_rng(2).integers(0, 128, 8)
    m = pairwise_xcorr_delays(_copies(shifts))
    U, s, Vh = np.linalg.svd(m.phase)
    assert s[0] >= (8 - 1e-6) * max(s[1], 1e-300) or s[1] < 1e-9
    approx = s[0] * np.outer(U[:, 0], Vh[0])
    assert np.linalg.norm(m.phase - approx) < 1e-8
    res = svd_phase_delays(m)
    assert _same_up_to_offset(res.lags, shifts, 128)
    assert not res.low_confidence


def test_svd_all_ones_equal_lags():
    res = svd_phase_delays(np.ones((5, 5)), T=64)
    assert np.all(res.lags == res.lags[0])


@given(st.lists(st.integers(0, 99), min_size=3, max_size=10))
def test_svd_recovers_constructed_shifts(shifts):
    tau = np.asarray(shifts)
    phi = np.exp(2j * np.pi * (tau[:, None] - tau[None, :]) / 100)
    assert _same_up_to_offset(svd_phase_delays(phi, T=100).lags, tau, 100)


def test_svd_low_confidence_warns():
    with pytest.warns(RuntimeWarning):
        res = svd_phase_delays(np.eye(4), T=16)
    assert res.low_confidence
    with pytest.raises(InvalidInputError):
        svd_phase_delays(np.eye(3))


def test_woody_noiseless():
    shifts = np.random.default_rng(3).integers(0, 128, 10)
    res = woody_align(_copies(shifts))
    assert _same_up_to_offset(res.delays.lags, shifts, 128)
    assert res.converged and res.iterations <= 3
    assert res.mean_peak_correlation > 0.99


def test_woody_noise_low_peak_correlation():
    noise = woody_align(np.random.default_rng(4).standard_normal((32, 256)))
    signal = woody_align(_copies(np.arange(0, 128, 4)))
    assert noise.mean_peak_correlation < 0.5 < signal.mean_peak_correlation


def test_input_validation():
    with pytest.raises(InvalidInputError):
        pairwise_xcorr_delays(np.zeros((1, 16)))
    with pytest.raises(InvalidInputError):
        woody_align(np.zeros((1, 16)))


@given(st.integers(1, 127))
def test_common_offset_gauge(c):
    shifts = np.random.default_rng(5).integers(0, 128, 8)
    a, b = _copies(shifts), _copies((shifts + c) % 128)
    for method in (svd_delays, lambda e: woody_align(e).delays.lags):
        la, lb = method(a), method(b)
        assert _same_up_to_offset(lb, la, 128)
        assert circular_delay_correlation(shifts, la, 128) == pytest.approx(
            circular_delay_correlation((shifts + c) % 128, lb, 128), abs=1e-12)


def test_svd_fails_at_heavy_outband_noise():
    ens, truth = simulate(SynthesisSpec(inband_snr_db=5, outband_snr_db=-15, seed=0))
    svd = circular_delay_correlation(truth.true_delays, svd_delays(ens), 512)
    hosd = circular_delay_correlation(truth.true_delays, iterate_alignment(ens).delays.lags, 512)
    assert svd < 0.5 and hosd > 0.9


def test_woody_at_least_svd_under_inband_noise():
    for level in (5.0, 0.0, -5.0, -10.0):
        w, s = [], []
        for seed in range(40):
            ens, truth = simulate(SynthesisSpec(inband_snr_db=level, seed=seed))
            w.append(circular_delay_correlation(truth.true_delays, woody_align(ens).delays.lags, 512))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                s.append(circular_delay_correlation(truth.true_delays, svd_delays(ens), 512))
        if level > -10:
            assert np.median(w) >= np.median(s)
        else:
            # both at chance: the ordering of two near-zero medians carries no information
            assert abs(np.median(w)) < 0.1 and abs(np.median(s)) < 0.1
