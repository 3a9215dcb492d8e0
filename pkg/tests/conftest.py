import numpy as np
import pytest

from gradalign.archspace import initialize
from gradalign.autodiff import GraphBuilder, NetworkInstance


def random_mlp(rng, seed, dims=None):
    """Dense ReLU net with random widths and generic (nonzero) biases."""
    if dims is None:
        depth = int(rng.integers(1, 4))
        dims = [int(rng.integers(2, 6))]
        dims += [int(rng.integers(2, 17)) for _ in range(depth)]
        dims += [int(rng.integers(2, 5))]
    b = GraphBuilder(dims[0])
    h = b.input
    for i, d in enumerate(dims[1:]):
        h = b.dense(h, d, f"l{i}")
        if i < len(dims) - 2:
            h = b.relu(h)
    net = NetworkInstance(b.build(h), name=f"mlp{seed}")
    return initialize(net, seed, bias_scale=1.0), list(dims)


def max_rel_error(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    mag = np.maximum(np.abs(a), np.abs(b))
    mask = mag > floor
    if not mask.any():
        return 0.0
    return float((np.abs(a - b)[mask] / mag[mask]).max())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
