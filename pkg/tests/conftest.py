import numpy as np
import pytest

from cstafnet.numerics import RngState


def make_blobs(n, d, n_classes, seed, sep=4.0, spread=0.5):
    """Linearly separable class blobs with deterministic placement."""
    rng = RngState(seed)
    centers = rng.uniform(-1.0, 1.0, (n_classes, d)) * (sep / np.sqrt(d))
    label_rng = RngState(seed + 1)
    y = (label_rng.random((n,)) * n_classes).astype(np.int64)
    x = centers[y] + rng.uniform(-spread, spread, (n, d))
    return x, y


@pytest.fixture
def blobs():
    return make_blobs
