import numpy as np
import pytest

from driftcast import DriftSpec, Sample, SplitSpec, build_model, chrono_split
from driftcast import gen_concept_drift, offline_train

FD_H = 1e-6


def fd_grad(fn, arr, h=FD_H):
    """Central-difference gradient of scalar fn with respect to arr."""
    arr = np.asarray(arr, dtype=np.float64)
    out = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        save = arr[idx]
        arr[idx] = save + h
        up = fn()
        arr[idx] = save - h
        down = fn()
        arr[idx] = save
        out[idx] = (up - down) / (2.0 * h)
        it.iternext()
    return out


def rel_err(analytic, numeric, floor=1e-4):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def ar_series(T, C, rng, coeff=0.8):
    x = np.zeros((T, C))
    for t in range(1, T):
        x[t] = coeff * x[t - 1] + rng.standard_normal(C)
    return x


def make_stream(n, L, k, C, seed, coeff=0.8):
    """n consecutive test-style samples over a fresh AR(1) series."""
    rng = np.random.default_rng(seed)
    series = ar_series(n + L + k, C, rng, coeff)
    out = []
    for i in range(n):
        o = L - 1 + i
        out.append(Sample(x=series[o - L + 1:o + 1],
                          y=series[o + 1:o + 1 + k], origin=o))
    return out


@pytest.fixture(scope="session")
def tiny_model():
    return build_model(L=8, k=2, d=4, n_blocks=3, seed=7)


@pytest.fixture(scope="session")
def small_trained():
    """A small model fitted on a short drift stream, with its splits."""
    spec = DriftSpec(kind="concept_drift", length=900, channels=2,
                     change_points=[700], magnitudes=[1.0], seed=5)
    frame = gen_concept_drift(spec)
    train, val, test = chrono_split(frame, SplitSpec(), L=24, k=4)
    model = build_model(L=24, k=4, d=12, n_blocks=3, seed=5)
    trained = offline_train(model, train, epochs=3, lr=1e-3, batch=16, seed=6)
    return trained, train, val, test
