"""Dense cell search space: genomes, decoding, initialization and sampling.

A cell is a complete DAG over 4 nodes. Node 0 is the cell input and node 3
its output; node ``j`` sums the outputs of its incoming edges. Edge order
follows the usual NAS-Bench-201 listing::

    (0->1), (0->2), (1->2), (0->3), (1->3), (2->3)

Inner nodes have the cell width. When the cell input width differs (only the
first cell, whose input is the raw feature vector), ``skip`` edges leaving
node 0 carry a bias-free linear projection so the sum is well defined.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import GraphBuilder, NetworkInstance, ParameterSet
from .errors import DecodeError, ExhaustionError
from .seeding import rng_for

OPS = ("zero", "skip", "dense-relu", "dense-linear", "bottleneck-relu")
EDGES = ((0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3))


def genome_id(edges, width: int, depth: int) -> str:
    payload = json.dumps({"edges": list(edges), "width": width, "depth": depth}, sort_keys=True)
    return "g" + hashlib.sha256(payload.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class ArchGenome:
    edges: tuple[str, ...]
    width: int
    depth: int

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(self.edges))
        if len(self.edges) != len(EDGES):
            raise DecodeError(f"genome needs exactly {len(EDGES)} edges, got {len(self.edges)}")
        bad = [op for op in self.edges if op not in OPS]
        if bad:
            raise DecodeError(f"unknown edge ops {bad}; expected members of {OPS}")
        if int(self.width) < 1 or int(self.depth) < 1:
            raise DecodeError("width and depth must be >= 1")

    @property
    def id(self) -> str:
        return genome_id(self.edges, self.width, self.depth)

    def to_dict(self) -> dict:
        return {"id": self.id, "edges": list(self.edges), "width": self.width, "depth": self.depth}

    @classmethod
    def from_dict(cls, obj: dict) -> "ArchGenome":
        genome = cls(tuple(obj["edges"]), int(obj["width"]), int(obj["depth"]))
        if "id" in obj and obj["id"] != genome.id:
            raise DecodeError(f"genome id {obj['id']!r} does not match its fields ({genome.id})")
        return genome

    @classmethod
    def uniform(cls, op: str, width: int = 8, depth: int = 1) -> "ArchGenome":
        return cls((op,) * len(EDGES), width, depth)


@dataclass(frozen=True)
class SpaceSpec:
    widths: tuple[int, ...] = (8, 16, 32)
    depths: tuple[int, ...] = (1, 2)
    ops: tuple[str, ...] = OPS
    seed: int = 0
    count: int = 30

    def __post_init__(self):
        for name in ("widths", "depths", "ops"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
            if not getattr(self, name):
                raise DecodeError(f"space spec {name} must be non-empty")
        if self.count < 1:
            raise DecodeError("space spec count must be >= 1")
        if any(op not in OPS for op in self.ops):
            raise DecodeError(f"space spec ops must be drawn from {OPS}")

    @property
    def cardinality(self) -> int:
        return len(set(self.ops)) ** len(EDGES) * len(set(self.widths)) * len(set(self.depths))


def _bottleneck_dim(width: int) -> int:
    return max(1, width // 2)


def _edge_layers(op: str, src_dim: int, width: int, prefix: str):
    """Dense layers ``(name, in, out, bias)`` realized by one edge op."""
    if op == "zero":
        return []
    if op == "skip":
        return [] if src_dim == width else [(f"{prefix}.proj", src_dim, width, False)]
    if op in ("dense-relu", "dense-linear"):
        return [(f"{prefix}.dense", src_dim, width, True)]
    if op == "bottleneck-relu":
        mid = _bottleneck_dim(width)
        return [(f"{prefix}.down", src_dim, mid, True), (f"{prefix}.up", mid, width, True)]
    raise DecodeError(f"unknown op {op!r}")  # pragma: no cover


def decode_genome(genome: ArchGenome, input_dim: int, num_classes: int, project_skips: bool = True) -> NetworkInstance:
    """Build the (uninitialized) computation graph for ``genome``.

    With ``project_skips=False`` a skip edge across a width change is a
    decode error instead of a projection.
    """
    if input_dim < 1 or num_classes < 1:
        raise DecodeError("input_dim and num_classes must be >= 1")
    b = GraphBuilder(input_dim)
    cur = b.input
    width = genome.width
    for c in range(genome.depth):
        nodes = {0: cur}
        for j in (1, 2, 3):
            contribs = []
            for e, (i, jj) in enumerate(EDGES):
                if jj != j:
                    continue
                op = genome.edges[e]
                src = nodes[i]
                prefix = f"c{c}.e{i}{j}"
                if op == "zero":
                    continue
                if op == "skip":
                    if b.dim(src) == width:
                        contribs.append(src)
                    elif project_skips:
                        contribs.append(b.dense(src, width, f"{prefix}.proj", bias=False))
                    else:
                        raise DecodeError(
                            f"skip edge {i}->{j} in cell {c} joins dims {b.dim(src)} and {width}"
                        )
                elif op == "dense-relu":
                    contribs.append(b.relu(b.dense(src, width, f"{prefix}.dense")))
                elif op == "dense-linear":
                    contribs.append(b.dense(src, width, f"{prefix}.dense"))
                elif op == "bottleneck-relu":
                    h = b.relu(b.dense(src, _bottleneck_dim(width), f"{prefix}.down"))
                    contribs.append(b.dense(h, width, f"{prefix}.up"))
            nodes[j] = b.add(contribs) if contribs else b.zero(width)
        cur = nodes[3]
    logits = b.dense(cur, num_classes, "classifier")
    return NetworkInstance(b.build(logits), None, genome.id)


def param_count(genome: ArchGenome, input_dim: int, num_classes: int) -> int:
    """Closed-form parameter count; agrees with ``decode_genome(...).num_params``."""
    total = 0
    width = genome.width
    cell_in = input_dim
    for _ in range(genome.depth):
        for e, (i, _j) in enumerate(EDGES):
            src_dim = cell_in if i == 0 else width
            for _name, n_in, n_out, bias in _edge_layers(genome.edges[e], src_dim, width, ""):
                total += n_in * n_out + (n_out if bias else 0)
        cell_in = width
    return total + cell_in * num_classes + num_classes


def initialize(net: NetworkInstance, seed: int, bias_scale: float = 0.0) -> NetworkInstance:
    """Fan-in uniform initialization.

    Weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)). Biases are 0 by default;
    a positive ``bias_scale`` draws them from U(-bias_scale/sqrt(fan_in),
    +bias_scale/sqrt(fan_in)) instead. The draw depends only on
    ``(net.name, seed)`` and the layer order.
    """
    rng = rng_for(net.name, seed)
    entries = []
    for spec in net.graph.layers():
        limit = math.sqrt(6.0 / spec.in_dim)
        entries.append(((spec.layer, "weight"), rng.uniform(-limit, limit, size=(spec.out_dim, spec.in_dim))))
        if spec.bias:
            if bias_scale > 0:
                blim = bias_scale / math.sqrt(spec.in_dim)
                entries.append(((spec.layer, "bias"), rng.uniform(-blim, blim, size=spec.out_dim)))
            else:
                entries.append(((spec.layer, "bias"), np.zeros(spec.out_dim)))
    return net.with_params(ParameterSet(entries))


def build_network(genome: ArchGenome, input_dim: int, num_classes: int, seed: int) -> NetworkInstance:
    return initialize(decode_genome(genome, input_dim, num_classes), seed)


def sample_space(spec: SpaceSpec) -> list[ArchGenome]:
    """Draw ``spec.count`` distinct genomes uniformly; resample duplicate ids."""
    if spec.count > spec.cardinality:
        raise ExhaustionError(
            f"requested {spec.count} distinct genomes but the space holds only {spec.cardinality}"
        )
    ops, widths, depths = sorted(set(spec.ops), key=OPS.index), sorted(set(spec.widths)), sorted(set(spec.depths))
    rng = rng_for("space", spec.seed)
    seen: set[str] = set()
    out = []
    while len(out) < spec.count:
        edges = tuple(ops[k] for k in rng.integers(len(ops), size=len(EDGES)))
        g = ArchGenome(edges, int(widths[rng.integers(len(widths))]), int(depths[rng.integers(len(depths))]))
        if g.id in seen:
            continue
        seen.add(g.id)
        out.append(g)
    return out


def dump_space(genomes, path) -> None:
    text = json.dumps([g.to_dict() for g in genomes], indent=2) + "\n"
    Path(path).write_text(text)


def load_space(path) -> list[ArchGenome]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = [data]
    return [ArchGenome.from_dict(obj) for obj in data]
