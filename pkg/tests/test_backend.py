"""Backend contract: the compiled kernels and the numpy fallback share
accumulation order and must agree bit for bit, on the raw kernels and on
a full forward/backward/optimizer step through the model."""

import numpy as np
import pytest

from cstafnet import backend, model, training
from cstafnet.errors import ConfigError
from cstafnet.numerics import RngState

needs_compiled = pytest.mark.skipif(
    "compiled" not in backend.available_backends(),
    reason="compiled kernels not built")


@pytest.fixture(autouse=True)
def restore_backend():
    prev = backend.get_backend()
    yield
    backend.set_backend(prev)


def test_unknown_backend_rejected():
    with pytest.raises(ConfigError):
        backend.set_backend("gpu")


@needs_compiled
def test_kernels_bit_identical_across_backends():
    rng = RngState(10)
    a = rng.uniform(-1, 1, (13, 21))
    b = rng.uniform(-1, 1, (21, 8))
    xp = rng.uniform(-1, 1, (3, 12, 5))
    w = rng.uniform(-1, 1, (5, 5, 7))
    gy = rng.uniform(-1, 1, (3, 8, 7))
    results = {}
    for name in ("python", "compiled"):
        backend.set_backend(name)
        results[name] = (
            backend.matmul(a, b),
            backend.conv1d_fwd(xp, w, 8),
            backend.conv1d_bwd_x(gy, w),
            backend.conv1d_bwd_w(xp, gy),
        )
    for got, want in zip(results["python"], results["compiled"]):
        np.testing.assert_array_equal(got, want)


@needs_compiled
def test_training_step_bit_identical_across_backends(blobs):
    from cstafnet.selfcheck import TINY_CONFIG
    x, y = blobs(16, TINY_CONFIG.input_dim, TINY_CONFIG.n_classes, seed=30)
    cfg = training.TrainConfig(batch_size=16, epochs=1)
    snapshots = {}
    for name in ("python", "compiled"):
        backend.set_backend(name)
        params = model.build_model(TINY_CONFIG)
        arrays = dict(model.named_arrays(params, trainable_only=True))
        state = training.init_optimizer(arrays)
        out, tape = model.forward_tape(params, TINY_CONFIG, x, "train", RngState(5))
        loss, gout = training.scce_loss(y, out)
        grads = model.backward(gout, tape)
        training.adam_step(arrays, grads, state, cfg)
        snapshots[name] = (out.copy(), {k: v.copy() for k, v in arrays.items()})
    np.testing.assert_array_equal(snapshots["python"][0], snapshots["compiled"][0])
    for k in snapshots["python"][1]:
        np.testing.assert_array_equal(snapshots["python"][1][k],
                                      snapshots["compiled"][1][k])


def test_matmul_contiguity_handled():
    # transposed (non-contiguous) operands must still work
    a = np.arange(6.0).reshape(2, 3)
    out = backend.matmul(a.T, np.ones((2, 4)))
    assert out.shape == (3, 4)
