"""Minimal reverse-mode differentiation for dense ReLU graphs.

A network is a topologically ordered list of nodes. Supported node kinds are
``input``, ``dense`` (affine map, optional bias), ``relu``, ``add`` and
``zero``. Forward and backward passes are vectorized over a batch of samples
so per-sample gradients come out of a single sweep.

Parameter layout: dense layers in topological order, weight before bias,
weights stored as ``(out, in)`` and flattened row-major. All arithmetic is
float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, EmptyInputError

LOSSES = ("cross_entropy", "mse")


@dataclass(frozen=True)
class Node:
    kind: str
    inputs: tuple[int, ...]
    dim: int
    layer: str | None = None
    bias: bool = True


@dataclass(frozen=True)
class LayerSpec:
    layer: str
    in_dim: int
    out_dim: int
    bias: bool


@dataclass(frozen=True)
class Graph:
    nodes: tuple[Node, ...]
    output: int

    @property
    def input_dim(self) -> int:
        return self.nodes[0].dim

    @property
    def output_dim(self) -> int:
        return self.nodes[self.output].dim

    def layers(self) -> list[LayerSpec]:
        out = []
        for node in self.nodes:
            if node.kind == "dense":
                src = self.nodes[node.inputs[0]]
                out.append(LayerSpec(node.layer, src.dim, node.dim, node.bias))
        return out

    def relu_nodes(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.kind == "relu"]

    @property
    def num_relu_units(self) -> int:
        return sum(self.nodes[i].dim for i in self.relu_nodes())


class GraphBuilder:
    """Incrementally assemble a :class:`Graph`.

    >>> b = GraphBuilder(2)
    >>> h = b.relu(b.dense(b.input, 4, "l1"))
    >>> g = b.build(b.dense(h, 3, "out"))
    """

    def __init__(self, input_dim: int):
        if input_dim < 1:
            raise DimensionError("input_dim must be positive")
        self._nodes = [Node("input", (), input_dim)]
        self._layer_ids: set[str] = set()

    @property
    def input(self) -> int:
        return 0

    def dim(self, idx: int) -> int:
        return self._nodes[idx].dim

    def _push(self, node: Node) -> int:
        self._nodes.append(node)
        return len(self._nodes) - 1

    def dense(self, src: int, out_dim: int, layer: str, bias: bool = True) -> int:
        if layer in self._layer_ids:
            raise ValueError(f"duplicate layer id {layer!r}")
        if out_dim < 1:
            raise DimensionError("dense output dim must be positive")
        self._layer_ids.add(layer)
        return self._push(Node("dense", (src,), out_dim, layer, bias))

    def relu(self, src: int) -> int:
        return self._push(Node("relu", (src,), self.dim(src)))

    def add(self, srcs) -> int:
        srcs = tuple(srcs)
        if not srcs:
            raise ValueError("add needs at least one input")
        dims = {self.dim(s) for s in srcs}
        if len(dims) != 1:
            raise DimensionError(f"add over mismatched dims {sorted(dims)}")
        if len(srcs) == 1:
            return srcs[0]
        return self._push(Node("add", srcs, dims.pop()))

    def zero(self, dim: int) -> int:
        return self._push(Node("zero", (), dim))

    def build(self, output: int) -> Graph:
        return Graph(tuple(self._nodes), output)


class ParameterSet:
    """Ordered parameter entries with a canonical flat layout.

    Keys are ``(layer_id, "weight" | "bias")``. Iteration order follows
    the graph's layer order, weight before bias; coordinates within an entry
    are row-major.
    """

    def __init__(self, entries):
        self._entries = {k: np.asarray(v, dtype=np.float64) for k, v in entries}
        self._slices = {}
        offset = 0
        for key, value in self._entries.items():
            self._slices[key] = slice(offset, offset + value.size)
            offset += value.size
        self.size = offset

    def __getitem__(self, key):
        return self._entries[key]

    def __contains__(self, key):
        return key in self._entries

    def keys(self):
        return list(self._entries)

    def items(self):
        return list(self._entries.items())

    def slice_of(self, layer: str, kind: str) -> slice:
        return self._slices[(layer, kind)]

    def flat_index(self, layer: str, kind: str, coord) -> int:
        value = self._entries[(layer, kind)]
        local = int(np.ravel_multi_index(np.atleast_1d(coord), value.shape)) if value.ndim else 0
        return self._slices[(layer, kind)].start + local

    def locate(self, index: int):
        """Inverse of :meth:`flat_index`: ``(layer, kind, coord)``."""
        if not 0 <= index < self.size:
            raise IndexError(index)
        for key, sl in self._slices.items():
            if sl.start <= index < sl.stop:
                coord = np.unravel_index(index - sl.start, self._entries[key].shape)
                return key[0], key[1], tuple(int(c) for c in coord)
        raise IndexError(index)  # pragma: no cover

    def flatten(self) -> np.ndarray:
        if not self._entries:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._entries.values()])

    def with_flat(self, flat) -> "ParameterSet":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.size,):
            raise DimensionError(f"expected flat vector of length {self.size}, got {flat.shape}")
        return ParameterSet(
            (k, flat[self._slices[k]].reshape(v.shape)) for k, v in self._entries.items()
        )

    def equals(self, other: "ParameterSet") -> bool:
        return self.keys() == other.keys() and all(
            np.array_equal(self[k], other[k]) for k in self.keys()
        )


@dataclass(frozen=True)
class NetworkInstance:
    graph: Graph
    params: ParameterSet | None = None
    name: str = ""

    @property
    def num_params(self) -> int:
        return sum(s.out_dim * s.in_dim + (s.out_dim if s.bias else 0) for s in self.graph.layers())

    def with_params(self, params: ParameterSet) -> "NetworkInstance":
        return NetworkInstance(self.graph, params, self.name)

    def with_flat(self, flat) -> "NetworkInstance":
        return self.with_params(self.params.with_flat(flat))


def zero_params(graph: Graph) -> ParameterSet:
    entries = []
    for spec in graph.layers():
        entries.append(((spec.layer, "weight"), np.zeros((spec.out_dim, spec.in_dim))))
        if spec.bias:
            entries.append(((spec.layer, "bias"), np.zeros(spec.out_dim)))
    return ParameterSet(entries)


def params_from_arrays(graph: Graph, arrays: dict) -> ParameterSet:
    """Build a ParameterSet from ``{layer: (W, b)}`` or ``{layer: W}``."""
    entries = []
    for spec in graph.layers():
        value = arrays[spec.layer]
        w, b = value if isinstance(value, tuple) else (value, None)
        w = np.asarray(w, dtype=np.float64).reshape(spec.out_dim, spec.in_dim)
        entries.append(((spec.layer, "weight"), w))
        if spec.bias:
            b = np.zeros(spec.out_dim) if b is None else np.asarray(b, dtype=np.float64).reshape(spec.out_dim)
            entries.append(((spec.layer, "bias"), b))
    return ParameterSet(entries)


@dataclass
class ForwardTrace:
    """Values recorded by a forward pass.

    ``values[i]`` is the output of node ``i``; ``pre_activations`` and
    ``post_activations`` list the ReLU nodes in topological order. For a
    single-sample trace arrays are 1-D, for a batch they carry a leading
    sample axis.
    """

    values: list
    relu_nodes: list[int]
    pre_activations: list = field(default_factory=list)
    post_activations: list = field(default_factory=list)
    output: int = -1

    @property
    def logits(self) -> np.ndarray:
        return self.values[self.output]

    @property
    def activation_code(self) -> np.ndarray:
        """Concatenated on/off states of every ReLU unit (1 iff pre-activation > 0)."""
        if not self.pre_activations:
            return np.zeros(self.logits.shape[:-1] + (0,), dtype=np.int8)
        return np.concatenate([(p > 0).astype(np.int8) for p in self.pre_activations], axis=-1)


def _check_ready(net: NetworkInstance):
    if net.params is None:
        raise ValueError("network has no parameters; call initialize() first")


def forward_batch(net: NetworkInstance, X) -> ForwardTrace:
    _check_ready(net)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.graph.input_dim:
        raise DimensionError(
            f"expected inputs of shape (N, {net.graph.input_dim}), got {X.shape}"
        )
    n = X.shape[0]
    values: list = []
    pre, post = [], []
    for node in net.graph.nodes:
        if node.kind == "input":
            v = X
        elif node.kind == "dense":
            v = values[node.inputs[0]] @ net.params[(node.layer, "weight")].T
            if node.bias:
                v = v + net.params[(node.layer, "bias")]
        elif node.kind == "relu":
            z = values[node.inputs[0]]
            v = np.maximum(z, 0.0)
            pre.append(z)
            post.append(v)
        elif node.kind == "add":
            v = values[node.inputs[0]]
            for src in node.inputs[1:]:
                v = v + values[src]
        elif node.kind == "zero":
            v = np.zeros((n, node.dim))
        else:  # pragma: no cover
            raise ValueError(f"unknown node kind {node.kind!r}")
        values.append(v)
    return ForwardTrace(values, net.graph.relu_nodes(), pre, post, net.graph.output)


def forward(net: NetworkInstance, x) -> ForwardTrace:
    """Single-sample forward pass."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"expected a 1-D input vector, got shape {x.shape}")
    trace = forward_batch(net, x[None, :])
    return ForwardTrace(
        [v[0] for v in trace.values],
        trace.relu_nodes,
        [p[0] for p in trace.pre_activations],
        [p[0] for p in trace.post_activations],
        trace.output,
    )


def _targets(loss: str, y, out_dim: int, n: int) -> np.ndarray:
    y = np.asarray(y)
    if loss == "cross_entropy" or (y.ndim == 1 and np.issubdtype(y.dtype, np.integer)):
        labels = y.astype(np.int64).reshape(n)
        if labels.min() < 0 or labels.max() >= out_dim:
            raise DimensionError(f"labels must lie in [0, {out_dim})")
        return np.eye(out_dim)[labels]
    return np.asarray(y, dtype=np.float64).reshape(n, out_dim)


def loss_and_dlogits(loss: str, logits: np.ndarray, y) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample losses ``(N,)`` and their gradients w.r.t. the logits ``(N, K)``."""
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    n, k = logits.shape
    t = _targets(loss, y, k, n)
    if loss == "cross_entropy":
        shifted = logits - logits.max(axis=1, keepdims=True)
        logsumexp = np.log(np.exp(shifted).sum(axis=1))
        logp = shifted - logsumexp[:, None]
        return -(t * logp).sum(axis=1), np.exp(logp) - t
    resid = logits - t
    return 0.5 * (resid**2).sum(axis=1), resid


def _backward(net: NetworkInstance, trace: ForwardTrace, dlogits: np.ndarray, per_sample: bool):
    graph, params = net.graph, net.params
    n = dlogits.shape[0]
    grads = np.zeros((n, params.size)) if per_sample else np.zeros(params.size)
    delta: list = [None] * len(graph.nodes)
    delta[graph.output] = dlogits
    relu_pos = {node_idx: k for k, node_idx in enumerate(trace.relu_nodes)}

    def push(idx, d):
        delta[idx] = d if delta[idx] is None else delta[idx] + d

    for idx in range(len(graph.nodes) - 1, -1, -1):
        d = delta[idx]
        if d is None:
            continue
        node = graph.nodes[idx]
        if node.kind == "dense":
            src = node.inputs[0]
            u = trace.values[src]
            w = params[(node.layer, "weight")]
            sw = params.slice_of(node.layer, "weight")
            if per_sample:
                grads[:, sw] = (d[:, :, None] * u[:, None, :]).reshape(n, -1)
            else:
                grads[sw] = (d.T @ u).ravel()
            if node.bias:
                sb = params.slice_of(node.layer, "bias")
                if per_sample:
                    grads[:, sb] = d
                else:
                    grads[sb] = d.sum(axis=0)
            push(src, d @ w)
        elif node.kind == "relu":
            # subgradient at exactly 0 is 0
            push(node.inputs[0], d * (trace.pre_activations[relu_pos[idx]] > 0))
        elif node.kind == "add":
            for src in node.inputs:
                push(src, d)
    return grads


def _unpack_probe(probe):
    if hasattr(probe, "X") and hasattr(probe, "y"):
        return np.asarray(probe.X, dtype=np.float64), np.asarray(probe.y)
    X, y = probe
    return np.atleast_2d(np.asarray(X, dtype=np.float64)), np.asarray(y)


def per_sample_gradients(net: NetworkInstance, probe, loss: str = "cross_entropy") -> np.ndarray:
    """Gradient of each sample's loss w.r.t. all parameters, one row per sample.

    ``probe`` is a ProbeSet or an ``(X, y)`` pair. Labels are integer classes
    for cross-entropy; for MSE they may also be real-valued targets of shape
    ``(N, K)``. Returns the ``N x d`` gradient matrix in flat-index order.
    """
    X, y = _unpack_probe(probe)
    if X.shape[0] == 0:
        raise EmptyInputError("probe contains no samples")
    trace = forward_batch(net, X)
    _, dlogits = loss_and_dlogits(loss, trace.logits, y)
    return _backward(net, trace, dlogits, per_sample=True)


def mean_loss_and_gradient(net: NetworkInstance, X, y, loss: str = "cross_entropy"):
    """Mean loss over a batch and its gradient, without materializing per-sample rows."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise EmptyInputError("batch contains no samples")
    trace = forward_batch(net, X)
    losses, dlogits = loss_and_dlogits(loss, trace.logits, y)
    n = X.shape[0]
    return losses.mean(), _backward(net, trace, dlogits / n, per_sample=False)


def sample_losses(net: NetworkInstance, X, y, loss: str = "cross_entropy") -> np.ndarray:
    trace = forward_batch(net, X)
    return loss_and_dlogits(loss, trace.logits, y)[0]


def finite_diff_gradient(net: NetworkInstance, sample, loss: str = "cross_entropy", step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of one sample's loss, one coordinate at a time."""
    if step <= 0:
        raise ValueError("step must be positive")
    x, y = sample
    X = np.asarray(x, dtype=np.float64).reshape(1, -1)
    y = np.asarray(y).reshape(1, *np.shape(y))
    theta = net.params.flatten()
    grad = np.empty_like(theta)
    for k in range(theta.size):
        plus = theta.copy()
        plus[k] += step
        minus = theta.copy()
        minus[k] -= step
        lp = sample_losses(net.with_flat(plus), X, y, loss)[0]
        lm = sample_losses(net.with_flat(minus), X, y, loss)[0]
        grad[k] = (lp - lm) / (2.0 * step)
    return grad
