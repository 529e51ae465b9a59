import numpy as np
import pytest

from ccpdml.data import split, synth_blobs

FD_STEP = 1e-5
FD_TOLERANCE = 1e-4


def central_difference(f, x, step=FD_STEP):
    """Central finite-difference gradient of the scalar function ``f()`` in the array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x, dtype=float)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + step
        up = f()
        x[i] = orig - step
        down = f()
        x[i] = orig
        grad[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=float).ravel()
    numeric = np.asarray(numeric, dtype=float).ravel()
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-8)
    return float(np.linalg.norm(analytic - numeric) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def blobs():
    """Small split blob dataset: 4 classes, 24 samples each, 6 test samples each."""
    return split(synth_blobs(4, 24, 6, 0.2, seed=3, test_per_class=6), 1.0 / 3.0, seed=3)
