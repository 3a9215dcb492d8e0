"""Linear-region census for networks with 2-D inputs.

The exact counter refines a polygon partition of the bounding box node by
node in topological order. Every region carries the affine map (as a
function of the input) of each node computed so far; at a ReLU node each
unit's zero set is a line inside the region, so the region is clipped into
its positive and negative halves. Regions are therefore convex and are in
one-to-one correspondence with the activation codes realized inside the box.

The grid counter is an independent lower bound: it evaluates activation
codes at pixel centers and counts the distinct codes seen. Since every
region is convex, one code means one region.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from skimage.measure import label

from .archspace import initialize
from .autodiff import GraphBuilder, NetworkInstance, forward_batch
from .errors import DataError, DegenerateGeometryError
from .seeding import rng_for

DEFAULT_BOX = (-3.0, 3.0, -3.0, 3.0)
TOLERANCES = (1e-9, 1e-7)
SLIVER_FACTOR = 100.0


@dataclass(frozen=True)
class PlanarNet:
    """Fully connected ReLU net ``[2, h_1, ..., h_L, 1]``.

    ``output_relu`` also rectifies the scalar output, as in the classic
    three-layer demonstration network.
    """

    dims: tuple[int, ...]
    network: NetworkInstance = field(repr=False)
    output_relu: bool = True

    @property
    def params(self):
        return self.network.params

    def with_flat(self, flat) -> "PlanarNet":
        return PlanarNet(self.dims, self.network.with_flat(flat), self.output_relu)

    def bias_index(self, layer: int, unit: int = 0) -> int:
        return self.params.flat_index(f"l{layer}", "bias", (unit,))


def planar_graph(dims, output_relu: bool = True):
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or dims[0] != 2 or dims[-1] != 1:
        raise DataError(f"planar nets need dims [2, ..., 1], got {list(dims)}")
    b = GraphBuilder(2)
    h = b.input
    for k, width in enumerate(dims[1:], start=1):
        h = b.dense(h, width, f"l{k}")
        if k < len(dims) - 1 or output_relu:
            h = b.relu(h)
    return b.build(h)


def planar_net(dims=(2, 2, 2, 1), seed: int = 0, output_relu: bool = True, bias_scale: float = 1.0) -> PlanarNet:
    """Seeded planar net; biases are drawn (not zeroed) so lines avoid the origin."""
    graph = planar_graph(dims, output_relu)
    name = "planar-" + "-".join(str(d) for d in dims) + ("-relu" if output_relu else "")
    net = initialize(NetworkInstance(graph, None, name), seed, bias_scale=bias_scale)
    return PlanarNet(tuple(dims), net, output_relu)


def planar_from_arrays(layers, output_relu: bool = True) -> PlanarNet:
    """Planar net from explicit ``[(W, b), ...]`` with W shaped ``(out, in)``."""
    from .autodiff import params_from_arrays

    dims = [2] + [np.atleast_2d(W).shape[0] for W, _ in layers]
    graph = planar_graph(dims, output_relu)
    params = params_from_arrays(graph, {f"l{k}": (W, b) for k, (W, b) in enumerate(layers, start=1)})
    return PlanarNet(tuple(dims), NetworkInstance(graph, params, "planar"), output_relu)


@dataclass(frozen=True)
class Region:
    polygon: np.ndarray
    code: tuple[int, ...]

    @property
    def area(self) -> float:
        return _area(self.polygon)


@dataclass(frozen=True)
class RegionCensus:
    count: int
    method: str
    box: tuple[float, float, float, float]
    codes: tuple[tuple[int, ...], ...] = ()
    regions: tuple[Region, ...] = field(default=(), repr=False)
    fragments: int | None = None

    def to_dict(self, with_codes: bool = True) -> dict:
        out = {"count": self.count, "method": self.method, "box": list(self.box)}
        if with_codes:
            out["codes"] = ["".join(str(b) for b in c) for c in self.codes]
        return out

    def to_json(self, with_codes: bool = True) -> str:
        return json.dumps(self.to_dict(with_codes), indent=2) + "\n"


def _as_network(net) -> NetworkInstance:
    return net.network if isinstance(net, PlanarNet) else net


def _check_box(box):
    x0, x1, y0, y1 = (float(v) for v in box)
    if not (x1 > x0 and y1 > y0):
        raise DataError(f"degenerate bounding box {box}")
    return x0, x1, y0, y1


def _area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _clip(poly: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Part of a convex polygon where the (snapped) signed distance is >= 0."""
    out = []
    k = len(poly)
    for i in range(k):
        p, q = poly[i], poly[(i + 1) % k]
        dp, dq = dist[i], dist[(i + 1) % k]
        if dp >= 0:
            out.append(p)
        if (dp > 0 and dq < 0) or (dp < 0 and dq > 0):
            t = dp / (dp - dq)
            out.append(p + t * (q - p))
    return np.array(out) if out else np.zeros((0, 2))


def _split(poly, a, c, tol):
    """Split ``poly`` by the line ``a.x + c = 0``; returns (positive, negative) pieces or None."""
    norm = float(np.linalg.norm(a))
    if norm == 0.0:
        return (poly, None) if c > 0 else (None, poly)
    dist = (poly @ a + c) / norm
    dist = np.where(np.abs(dist) <= tol, 0.0, dist)
    if np.all(dist <= 0):
        return None, poly
    if np.all(dist >= 0):
        # a region lying entirely on the line has no positive interior
        return (poly, None) if np.any(dist > 0) else (None, poly)
    pos, neg = _clip(poly, dist), _clip(poly, -dist)
    for piece, d in ((pos, dist), (neg, -dist)):
        thickness = float(d.max())
        if thickness <= SLIVER_FACTOR * tol:
            raise DegenerateGeometryError(
                f"line nearly coincides with a cell edge (sliver thickness {thickness:.3g})"
            )
    return pos, neg


def _refine(net: NetworkInstance, box, tol: float) -> list[Region]:
    x0, x1, y0, y1 = box
    start = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64)
    graph, params = net.graph, net.params
    # each region: (polygon, code bits, per-node affine maps {idx: (A, c)})
    regions = [(start, (), {0: (np.eye(2), np.zeros(2))})]
    for idx, node in enumerate(graph.nodes):
        if idx == 0:
            continue
        nxt = []
        for poly, code, maps in regions:
            if node.kind == "dense":
                A, c = maps[node.inputs[0]]
                W = params[(node.layer, "weight")]
                b = params[(node.layer, "bias")] if node.bias else 0.0
                maps = {**maps, idx: (W @ A, W @ c + b)}
                nxt.append((poly, code, maps))
            elif node.kind == "add":
                A = sum(maps[s][0] for s in node.inputs)
                c = sum(maps[s][1] for s in node.inputs)
                nxt.append((poly, code, {**maps, idx: (A, c)}))
            elif node.kind == "zero":
                nxt.append((poly, code, {**maps, idx: (np.zeros((node.dim, 2)), np.zeros(node.dim))}))
            elif node.kind == "relu":
                A, c = maps[node.inputs[0]]
                pieces = [(poly, ())]
                for u in range(node.dim):
                    split = []
                    for piece, bits in pieces:
                        pos, neg = _split(piece, A[u], c[u], tol)
                        if pos is not None:
                            split.append((pos, bits + (1,)))
                        if neg is not None:
                            split.append((neg, bits + (0,)))
                    pieces = split
                for piece, bits in pieces:
                    mask = np.array(bits, dtype=np.float64)
                    nxt.append((piece, code + bits, {**maps, idx: (A * mask[:, None], c * mask)}))
            else:  # pragma: no cover
                raise ValueError(node.kind)
        regions = nxt
    return [Region(poly, code) for poly, code, _ in regions]


def count_regions_exact(net, box=DEFAULT_BOX, max_units: int = 16) -> RegionCensus:
    """Exact number of activation regions of ``net`` inside ``box``.

    Retries once with a looser snapping tolerance when a unit's boundary
    nearly coincides with an existing cell edge.
    """
    network = _as_network(net)
    box = _check_box(box)
    if network.graph.input_dim != 2:
        raise DataError("region counting needs 2-D inputs")
    units = network.graph.num_relu_units
    if units > max_units:
        raise DataError(f"{units} ReLU units exceed the exact-counter limit of {max_units}")
    err = None
    for tol in TOLERANCES:
        try:
            regions = _refine(network, box, tol)
            break
        except DegenerateGeometryError as exc:
            err = exc
    else:
        raise err
    regions.sort(key=lambda r: r.code)
    codes = [r.code for r in regions]
    if len(set(codes)) != len(codes):
        raise DegenerateGeometryError("two exact regions share an activation code")
    return RegionCensus(len(regions), "exact", box, tuple(codes), tuple(regions))


def grid_codes(net, box=DEFAULT_BOX, resolution: int = 500, chunk_rows: int = 256) -> np.ndarray:
    """Integer activation code at each pixel centre, shape ``(resolution, resolution)``."""
    network = _as_network(net)
    x0, x1, y0, y1 = _check_box(box)
    if resolution < 2:
        raise DataError("grid resolution must be >= 2")
    units = network.graph.num_relu_units
    if units > 62:
        raise DataError("grid codes are packed into int64; too many ReLU units")
    xs = x0 + (np.arange(resolution) + 0.5) * (x1 - x0) / resolution
    ys = y0 + (np.arange(resolution) + 0.5) * (y1 - y0) / resolution
    weights = (1 << np.arange(units, dtype=np.int64))[::-1]
    out = np.empty((resolution, resolution), dtype=np.int64)
    for r0 in range(0, resolution, chunk_rows):
        rows = ys[r0 : r0 + chunk_rows]
        gx, gy = np.meshgrid(xs, rows)
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        code = forward_batch(network, pts).activation_code.astype(np.int64)
        out[r0 : r0 + len(rows)] = (code @ weights).reshape(len(rows), resolution)
    return out


def count_regions_grid(net, box=DEFAULT_BOX, resolution: int = 500) -> RegionCensus:
    """Grid lower bound on the exact count.

    Pixels are labelled into 4-connected components of equal code, then
    components sharing a code are merged: a fixed activation pattern cuts
    out a convex set, so one code is one region. Regions thinner than a
    pixel fragment on the grid; ``fragments`` records the raw component
    count before merging.
    """
    codes = grid_codes(net, box, resolution)
    _, fragments = label(codes, background=-1, connectivity=1, return_num=True)
    units = _as_network(net).graph.num_relu_units
    uniq = np.unique(codes)
    as_bits = tuple(tuple(int(b) for b in format(int(v), f"0{units}b")) if units else () for v in uniq)
    return RegionCensus(len(uniq), "grid", _check_box(box), as_bits, fragments=int(fragments))


def _interior_points(poly: np.ndarray, rng, k: int) -> np.ndarray:
    w = rng.dirichlet(np.ones(len(poly)), size=k)
    return w @ poly


def affine_certificate(net, census: RegionCensus, seed: int = 0) -> float:
    """Max error predicting a 4th interior point from an affine fit through 3.

    Evaluated in every region of an exact census; returns the worst absolute
    error over all regions and outputs.
    """
    network = _as_network(net)
    rng = rng_for("affine", seed)
    worst = 0.0
    for region in census.regions:
        pts = _interior_points(region.polygon, rng, 4)
        vals = forward_batch(network, pts).logits
        design = np.column_stack([pts[:3], np.ones(3)])
        coef = np.linalg.solve(design, vals[:3])
        pred = np.append(pts[3], 1.0) @ coef
        worst = max(worst, float(np.abs(pred - vals[3]).max()))
    return worst


def translate(net, shift) -> object:
    """Net computing ``x -> net(x - shift)``; only first-layer biases change."""
    network = _as_network(net)
    shift = np.asarray(shift, dtype=np.float64)
    first = next(n for n in network.graph.nodes if n.kind == "dense")
    if first.inputs[0] != 0 or not first.bias:
        raise DataError("translate needs a biased first dense layer fed by the input")
    if sum(1 for n in network.graph.nodes if n.kind == "dense" and n.inputs[0] == 0) != 1:
        raise DataError("translate supports a single dense layer on the input")
    W = network.params[(first.layer, "weight")]
    sl = network.params.slice_of(first.layer, "bias")
    flat = network.params.flatten()
    flat[sl] = flat[sl] - W @ shift
    moved = network.with_flat(flat)
    return PlanarNet(net.dims, moved, net.output_relu) if isinstance(net, PlanarNet) else moved


def perturb_sensitivity(net, target: int, deltas, box=DEFAULT_BOX) -> list[tuple[float, int]]:
    """Exact counts for the unperturbed net (delta 0) followed by each delta."""
    network = _as_network(net)
    if not 0 <= target < network.params.size:
        raise DataError(f"parameter coordinate {target} out of range [0, {network.params.size})")
    base = network.params.flatten()
    out = [(0.0, count_regions_exact(network, box).count)]
    for delta in deltas:
        flat = base.copy()
        flat[target] += float(delta)
        out.append((float(delta), count_regions_exact(network.with_flat(flat), box).count))
    return out


@dataclass(frozen=True)
class SensitivityHit:
    seed: int
    param: int
    delta: float
    base_count: int
    count: int

    @property
    def change(self) -> int:
        return self.count - self.base_count


def sensitivity_search(
    seeds=range(100),
    deltas=(-0.5, -0.35, -0.2, -0.1, 0.1, 0.2, 0.35, 0.5),
    dims=(2, 2, 2, 1),
    layer: int = 2,
    unit: int = 0,
    box=DEFAULT_BOX,
) -> list[SensitivityHit]:
    """Sweep one bias over seeded planar nets; one row per (seed, delta)."""
    rows = []
    for seed in seeds:
        net = planar_net(dims, seed)
        target = net.bias_index(layer, unit)
        sweep = perturb_sensitivity(net, target, deltas, box)
        base = sweep[0][1]
        rows.extend(SensitivityHit(int(seed), target, d, base, c) for d, c in sweep[1:])
    return rows


def write_sensitivity_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "param", "delta", "count"])
        for r in rows:
            w.writerow([r.seed, r.param, repr(r.delta), r.count])


def region_count_scores(genomes, input_dim: int, num_classes: int, seed: int, box=DEFAULT_BOX):
    """Exact region count at init for each genome, as score records (higher is better)."""
    from .archspace import build_network
    from .metrics import ScoreRecord

    records = []
    for g in genomes:
        net = build_network(g, input_dim, num_classes, seed)
        count = count_regions_exact(net, box).count
        records.append(
            ScoreRecord(g.id, "linear_regions", float(count), True, (float(count),), (), 0, 0, net.num_params)
        )
    return records


def region_score_correlation(genomes, probe, bench, seed: int = 0, box=DEFAULT_BOX, variant: str = "b"):
    """Kendall tau between exact region count at init and trained accuracy."""
    from .harness import evaluate_metric

    records = region_count_scores(genomes, probe.X.shape[1], probe.num_classes, seed, box)
    return evaluate_metric(records, bench, variant)
