import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import max_rel_error, random_mlp
from gradalign.archspace import ArchGenome, build_network
from gradalign.autodiff import (
    GraphBuilder,
    NetworkInstance,
    finite_diff_gradient,
    forward,
    forward_batch,
    mean_loss_and_gradient,
    params_from_arrays,
    per_sample_gradients,
)
from gradalign.errors import DimensionError, EmptyInputError


def scalar_linear(w=2.0):
    b = GraphBuilder(1)
    out = b.dense(b.input, 1, "w", bias=False)
    g = b.build(out)
    return NetworkInstance(g, params_from_arrays(g, {"w": np.array([[w]])}))


def test_identity_network_passes_input_through():
    b = GraphBuilder(2)
    g = b.build(b.add([b.input]))
    net = NetworkInstance(g, params_from_arrays(g, {}))
    np.testing.assert_array_equal(forward(net, [0.3, -0.7]).logits, [0.3, -0.7])


def test_single_dense_relu():
    b = GraphBuilder(1)
    h = b.relu(b.dense(b.input, 1, "l"))
    g = b.build(h)
    net = NetworkInstance(g, params_from_arrays(g, {"l": (np.array([[2.0]]), np.array([1.0]))}))
    tr = forward(net, [3.0])
    assert tr.post_activations[0][0] == 7.0


def test_forward_matches_handwritten_pass(rng):
    net, _ = random_mlp(rng, 3, dims=[2, 16, 16, 4])
    x = rng.standard_normal(2)
    p = net.params
    h = np.maximum(p[("l0", "weight")] @ x + p[("l0", "bias")], 0)
    h = np.maximum(p[("l1", "weight")] @ h + p[("l1", "bias")], 0)
    z = p[("l2", "weight")] @ h + p[("l2", "bias")]
    np.testing.assert_allclose(forward(net, x).logits, z, rtol=0, atol=1e-14)


def test_dimension_mismatch_rejected(rng):
    net, _ = random_mlp(rng, 0, dims=[2, 4, 3])
    with pytest.raises(DimensionError):
        forward(net, [1.0, 2.0, 3.0])
    with pytest.raises(DimensionError):
        forward_batch(net, np.zeros((4, 5)))


def test_scalar_mse_gradient_by_hand():
    net = scalar_linear(2.0)
    g = per_sample_gradients(net, (np.array([[3.0]]), np.array([[0.0]])), loss="mse")
    np.testing.assert_array_equal(g, [[18.0]])


def test_finite_difference_scalar_case():
    net = scalar_linear(2.0)
    fd = finite_diff_gradient(net, (np.array([3.0]), np.array([0.0])), loss="mse")
    assert abs(fd[0] - 18.0) < 1e-6


def test_constant_output_net_has_flat_loss():
    b = GraphBuilder(2)
    out = b.dense(b.relu(b.dense(b.input, 3, "h")), 2, "o")
    g = b.build(out)
    params = params_from_arrays(g, {"h": np.ones((3, 2)), "o": (np.zeros((2, 3)), np.array([0.5, -1.0]))})
    net = NetworkInstance(g, params)
    fd = finite_diff_gradient(net, (np.array([0.2, 0.4]), np.array([0.5, -1.0])), loss="mse")
    np.testing.assert_allclose(fd, 0.0, atol=1e-12)


def test_zero_input_kills_first_layer_weight_gradients(rng):
    net, _ = random_mlp(rng, 1, dims=[3, 8, 4])
    g = per_sample_gradients(net, (np.zeros((1, 3)), np.array([2])))[0]
    assert np.all(g[net.params.slice_of("l0", "weight")] == 0)
    assert np.any(g[net.params.slice_of("l0", "bias")] != 0)


def test_matches_finite_differences_small_net(rng):
    net, _ = random_mlp(rng, 7, dims=[2, 8, 3])
    X = rng.standard_normal((4, 2))
    y = np.array([0, 1, 2, 1])
    G = per_sample_gradients(net, (X, y))
    for i in range(4):
        assert max_rel_error(G[i], finite_diff_gradient(net, (X[i], y[i]))) < 1e-5


def test_empty_probe_rejected(rng):
    net, _ = random_mlp(rng, 0, dims=[2, 4, 3])
    with pytest.raises(EmptyInputError):
        per_sample_gradients(net, (np.zeros((0, 2)), np.zeros(0, dtype=int)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 12))
def test_mean_gradient_is_column_mean(seed, n):
    rng = np.random.default_rng(seed)
    net, dims = random_mlp(rng, seed)
    X = rng.standard_normal((n, dims[0]))
    y = rng.integers(0, dims[-1], size=n)
    _, mean_grad = mean_loss_and_gradient(net, X, y)
    np.testing.assert_allclose(mean_grad, per_sample_gradients(net, (X, y)).mean(axis=0), rtol=0, atol=1e-12)


def test_gradients_are_deterministic():
    g = ArchGenome(("dense-relu", "skip", "bottleneck-relu", "dense-linear", "zero", "skip"), 8, 2)
    X = np.random.default_rng(0).standard_normal((6, 2))
    y = np.arange(6) % 3
    a = per_sample_gradients(build_network(g, 2, 3, 5), (X, y))
    b = per_sample_gradients(build_network(g, 2, 3, 5), (X, y))
    assert a.tobytes() == b.tobytes()


def test_dead_relu_blocks_upstream_gradient():
    # second hidden unit is dead for this input, so its incoming row gets no gradient
    b = GraphBuilder(2)
    h = b.relu(b.dense(b.input, 2, "h"))
    out = b.dense(h, 2, "o")
    g = b.build(out)
    W = np.array([[1.0, 1.0], [-1.0, -1.0]])
    params = params_from_arrays(g, {"h": (W, np.zeros(2)), "o": (np.ones((2, 2)) * 0.3, np.zeros(2))})
    net = NetworkInstance(g, params)
    grad = per_sample_gradients(net, (np.array([[0.5, 0.25]]), np.array([1])))[0]
    sw = net.params.slice_of("h", "weight")
    sb = net.params.slice_of("h", "bias")
    assert np.all(grad[sw].reshape(2, 2)[1] == 0)
    assert grad[sb][1] == 0
    assert np.all(grad[net.params.slice_of("o", "weight")].reshape(2, 2)[:, 1] == 0)


def test_flat_layout_is_weight_then_bias_row_major(rng):
    net, _ = random_mlp(rng, 2, dims=[2, 3, 2])
    p = net.params
    assert p.flat_index("l0", "weight", (1, 0)) == 2
    assert p.flat_index("l0", "bias", (0,)) == 6
    assert p.flat_index("l1", "weight", (0, 0)) == 9
    assert p.locate(7) == ("l0", "bias", (1,))
    np.testing.assert_array_equal(p.with_flat(p.flatten()).flatten(), p.flatten())
