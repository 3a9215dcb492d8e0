"""Ground-truth accuracies: synthetic datasets and a momentum-SGD trainer."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archspace import ArchGenome, build_network
from .autodiff import NetworkInstance, forward_batch, mean_loss_and_gradient
from .errors import DataError, TrainingDivergedError
from .seeding import rng_for

DATASET_KINDS = ("blobs", "spirals", "xor-grid")
BENCH_FIELDS = ("genome_id", "dataset", "seed", "accuracy", "epochs", "diverged")


@dataclass(frozen=True)
class Dataset:
    name: str
    input_dim: int
    num_classes: int
    X_train: np.ndarray = field(repr=False)
    y_train: np.ndarray = field(repr=False)
    X_test: np.ndarray = field(repr=False)
    y_test: np.ndarray = field(repr=False)
    seed: int = 0

    def equals(self, other: "Dataset") -> bool:
        return (
            self.name == other.name
            and np.array_equal(self.X_train, other.X_train)
            and np.array_equal(self.y_train, other.y_train)
            and np.array_equal(self.X_test, other.X_test)
            and np.array_equal(self.y_test, other.y_test)
        )


def _class_counts(n: int, num_classes: int) -> np.ndarray:
    counts = np.full(num_classes, n // num_classes)
    counts[: n % num_classes] += 1
    return counts


def _blobs(rng, n, num_classes, noise):
    counts = _class_counts(n, num_classes)
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    centers = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    y = np.repeat(np.arange(num_classes), counts)
    X = centers[y] + noise * rng.standard_normal((n, 2))
    return X, y


def _spirals(rng, n, noise, turns=1.5):
    counts = _class_counts(n, 2)
    y = np.repeat(np.arange(2), counts)
    t = np.sqrt(rng.uniform(0.05, 1.0, size=n))
    angle = 2 * np.pi * turns * t + np.pi * y
    X = np.stack([t * np.cos(angle), t * np.sin(angle)], axis=1)
    return X + noise * rng.standard_normal((n, 2)), y


def _xor_grid(rng, n, noise):
    X = rng.uniform(-1.0, 1.0, size=(n, 2))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(np.int64)
    return X + noise * rng.standard_normal((n, 2)), y


def generate_dataset(
    kind: str,
    n_train: int = 200,
    n_test: int = 200,
    noise: float = 0.05,
    num_classes: int = 4,
    seed: int = 0,
) -> Dataset:
    """Deterministic 2-D synthetic classification data.

    ``blobs`` places Gaussian clusters at unit-circle-spaced centers,
    ``spirals`` draws two interleaved arms and ``xor-grid`` labels points in
    [-1, 1]^2 by quadrant parity. ``num_classes`` only applies to blobs.
    """
    if kind not in DATASET_KINDS:
        raise DataError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
    if n_train < 1 or n_test < 1 or noise < 0 or not math.isfinite(noise):
        raise DataError("dataset sizes must be positive and noise a finite value >= 0")
    if kind == "blobs" and num_classes < 2:
        raise DataError("blobs need at least 2 classes")
    rng = rng_for(f"dataset:{kind}", seed)
    splits = []
    for n in (n_train, n_test):
        if kind == "blobs":
            X, y = _blobs(rng, n, num_classes, noise)
        elif kind == "spirals":
            X, y = _spirals(rng, n, noise)
        else:
            X, y = _xor_grid(rng, n, noise)
        order = rng.permutation(n)
        splits.append((X[order].astype(np.float64), y[order].astype(np.int64)))
    C = num_classes if kind == "blobs" else 2
    (Xtr, ytr), (Xte, yte) = splits
    return Dataset(kind, 2, C, Xtr, ytr, Xte, yte, seed)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr: float = 0.1
    batch_size: int | None = 32
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0 or self.epochs < 1:
            raise DataError("train config needs lr > 0 and epochs >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise DataError("batch_size must be >= 1 (or None for full batch)")
        if not 0 <= self.momentum < 1:
            raise DataError("momentum must lie in [0, 1)")


@dataclass(frozen=True)
class TrainResult:
    genome_id: str
    accuracy: float
    curve: tuple[float, ...]
    epochs: int
    diverged: bool = False


def accuracy(net: NetworkInstance, X, y) -> float:
    logits = forward_batch(net, X).logits
    return float((logits.argmax(axis=1) == np.asarray(y)).mean())


def fit(net: NetworkInstance, dataset: Dataset, config: TrainConfig):
    """Momentum SGD on mean softmax cross-entropy.

    Returns ``(net, curve)`` where ``curve[0]`` is the initial full training
    loss and ``curve[e]`` the loss after epoch ``e``. Raises
    TrainingDivergedError (with the last finite network attached) on a
    non-finite loss.
    """
    X, y = dataset.X_train, dataset.y_train
    n = X.shape[0]
    bs = n if config.batch_size is None else min(config.batch_size, n)
    rng = rng_for(f"train:{net.name}", config.seed)
    theta = net.params.flatten()
    velocity = np.zeros_like(theta)
    loss0, _ = mean_loss_and_gradient(net, X, y)
    curve = [float(loss0)]
    last_good = net
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if bs < n else np.arange(n)
        with np.errstate(all="ignore"):
            for start in range(0, n, bs):
                idx = order[start : start + bs]
                _, grad = mean_loss_and_gradient(net, X[idx], y[idx])
                velocity = config.momentum * velocity + grad
                theta = theta - config.lr * velocity
                net = net.with_flat(theta)
            loss, _ = mean_loss_and_gradient(net, X, y)
        if not np.isfinite(loss) or not np.all(np.isfinite(theta)):
            err = TrainingDivergedError(f"loss diverged in epoch {epoch}", epoch - 1)
            err.network = last_good
            err.curve = tuple(curve)
            raise err
        curve.append(float(loss))
        last_good = net
    return net, tuple(curve)


def train(genome: ArchGenome, dataset: Dataset, config: TrainConfig, init_seed: int | None = None) -> TrainResult:
    """Train ``genome`` from its seeded init and report final test accuracy."""
    seed = config.seed if init_seed is None else init_seed
    net = build_network(genome, dataset.input_dim, dataset.num_classes, seed)
    net, curve = fit(net, dataset, config)
    return TrainResult(genome.id, accuracy(net, dataset.X_test, dataset.y_test), curve, config.epochs)


def _train_row(args):
    genome, dataset, config, init_seed = args
    try:
        res = train(genome, dataset, config, init_seed)
    except TrainingDivergedError as err:
        acc = accuracy(err.network, dataset.X_test, dataset.y_test)
        res = TrainResult(genome.id, acc, err.curve, err.last_finite_epoch, diverged=True)
    return res


@dataclass
class BenchmarkTable:
    rows: dict = field(default_factory=dict)

    def accuracy(self, genome_id: str) -> float:
        return self.rows[genome_id]["accuracy"]

    def __contains__(self, genome_id):
        return genome_id in self.rows

    def __len__(self):
        return len(self.rows)

    def ids(self) -> list[str]:
        return sorted(self.rows)

    def datasets(self) -> list[str]:
        return sorted({r["dataset"] for r in self.rows.values()})

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(BENCH_FIELDS)
            for gid in self.ids():
                r = self.rows[gid]
                w.writerow([gid, r["dataset"], r["seed"], repr(r["accuracy"]), r["epochs"], int(r["diverged"])])

    @classmethod
    def from_csv(cls, path) -> "BenchmarkTable":
        table = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(BENCH_FIELDS) - set(reader.fieldnames or ())
            if missing:
                raise DataError(f"benchmark table {path} lacks columns {sorted(missing)}")
            for r in reader:
                table.rows[r["genome_id"]] = {
                    "dataset": r["dataset"],
                    "seed": int(r["seed"]),
                    "accuracy": float(r["accuracy"]),
                    "epochs": int(r["epochs"]),
                    "diverged": r["diverged"].strip().lower() in ("1", "true"),
                }
        return table


def benchmark_space(
    genomes,
    dataset: Dataset,
    config: TrainConfig,
    path=None,
    init_seed: int | None = None,
    jobs: int = 1,
) -> BenchmarkTable:
    """Train every genome; rows already present in ``path`` are reused, not retrained."""
    genomes = list(genomes)
    if len(genomes) < 2:
        raise DataError("benchmark_space needs at least 2 genomes")
    table = BenchmarkTable.from_csv(path) if path is not None and Path(path).exists() else BenchmarkTable()
    seed = config.seed if init_seed is None else init_seed
    todo = [g for g in genomes if g.id not in table]
    jobs_args = [(g, dataset, config, seed) for g in todo]
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_row, jobs_args))
    else:
        results = [_train_row(a) for a in jobs_args]
    for res in results:
        table.rows[res.genome_id] = {
            "dataset": dataset.name,
            "seed": seed,
            "accuracy": res.accuracy,
            "epochs": res.epochs,
            "diverged": res.diverged,
        }
    if path is not None:
        table.to_csv(path)
    return table
