import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("hosd", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("hosd")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_bispectrum(records):
    """(1/L) sum_j X(w1) X(w2) X*(w1+w2) by explicit loops over the full grid."""
    X = np.fft.fft(np.atleast_2d(records), axis=1)
    L, T = X.shape
    B = np.zeros((T, T), complex)
    for j in range(L):
        for a in range(T):
            for b in range(T):
                B[a, b] += X[j, a] * X[j, b] * np.conj(X[j, (a + b) % T])
    return B / L


def brute_trispectrum(records):
    X = np.fft.fft(np.atleast_2d(records), axis=1)
    L, T = X.shape
    B = np.zeros((T, T, T), complex)
    for j in range(L):
        for a in range(T):
            for b in range(T):
                for c in range(T):
                    B[a, b, c] += X[j, a] * X[j, b] * X[j, c] * np.conj(X[j, (a + b + c) % T])
    return B / L
