"""Shared helpers: finite-difference gradient oracles and small random nets."""

import numpy as np
import pytest

from vatlab import nn
from vatlab.numerics import make_rng


def numeric_grad(f, arr, step=1e-5):
    """Central-difference gradient of scalar f() with respect to arr (in place)."""
    grad = np.zeros_like(arr)
    flat = arr.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def max_rel_err(analytic, numeric, floor=1e-8):
    denom = np.maximum(np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def random_small_net(rng, sizes=None):
    sizes = sizes or [4, 6, 3]
    net = nn.init_mlp(sizes, rng)
    # keep pre-activations away from ReLU kinks for finite differences
    for layer in net.layers:
        layer.biases += 0.1 * rng.standard_normal(layer.biases.shape)
    return net


@pytest.fixture
def rng():
    return make_rng(12345)
