"""Evaluation protocol: probe sets, Kendall's tau and per-metric reports."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, MissingGenomeError, UndefinedCorrelationError
from .seeding import rng_for


@dataclass(frozen=True)
class ProbeSet:
    """Stratified labeled mini-batch, rows grouped by class."""

    X: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    num_classes: int
    dataset: str = ""
    seed: int = 0

    @property
    def size(self) -> int:
        return int(self.X.shape[0])

    def by_class(self) -> dict[int, np.ndarray]:
        return {int(c): self.X[self.y == c] for c in np.unique(self.y)}

    def equals(self, other: "ProbeSet") -> bool:
        return np.array_equal(self.X, other.X) and np.array_equal(self.y, other.y)


def build_probe(dataset, n: int, seed: int) -> ProbeSet:
    """Sample ``n`` training points with per-class counts as equal as possible."""
    C = dataset.num_classes
    if n < C:
        raise DataError(f"cannot stratify {n} samples over {C} classes")
    if n > len(dataset.y_train):
        raise DataError(f"probe size {n} exceeds training set size {len(dataset.y_train)}")
    rng = rng_for(f"probe:{dataset.name}", seed)
    pools = [np.flatnonzero(dataset.y_train == c) for c in range(C)]
    want = np.full(C, n // C)
    want[: n % C] += 1
    short = [c for c in range(C) if len(pools[c]) < want[c]]
    if short:
        raise DataError(f"classes {short} have too few training samples for a probe of size {n}")
    idx = np.concatenate([np.sort(rng.choice(pools[c], size=want[c], replace=False)) for c in range(C)])
    return ProbeSet(dataset.X_train[idx], dataset.y_train[idx], C, dataset.name, seed)


def _pair_signs(v: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(len(v), k=1)
    diff = v[:, None] - v[None, :]
    return np.sign(diff[iu]).astype(np.int64)


def kendall_tau(xs, ys, variant: str = "b") -> float:
    """Kendall rank correlation from exact integer pair counts.

    ``variant="b"`` applies the tie correction S / sqrt((n0-n1)(n0-n2));
    ``variant="a"`` returns S / n0. Raises UndefinedCorrelationError when
    the tie-corrected denominator vanishes.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise DataError("kendall_tau needs two 1-D sequences of equal length")
    if len(xs) < 2:
        raise DataError("kendall_tau needs at least 2 observations")
    sx, sy = _pair_signs(xs), _pair_signs(ys)
    s = int((sx * sy).sum())
    n0 = len(sx)
    if variant == "a":
        return s / n0
    if variant != "b":
        raise ValueError(f"unknown tau variant {variant!r}")
    untied_x = int(np.count_nonzero(sx))
    untied_y = int(np.count_nonzero(sy))
    if untied_x == 0 or untied_y == 0:
        raise UndefinedCorrelationError("all values tied in one input; tau-b is undefined")
    return s / np.sqrt(float(untied_x) * float(untied_y))


@dataclass(frozen=True)
class TauReport:
    metric: str
    dataset: str
    tau: float
    tau_variant: str
    n_architectures: int
    top_pick: tuple[str, float]
    best_possible: float
    ranking: tuple[str, ...]
    scores: tuple[float, ...] = ()
    accuracies: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "dataset": self.dataset,
            "tau": self.tau,
            "tau_variant": self.tau_variant,
            "n_architectures": self.n_architectures,
            "top_pick": {"id": self.top_pick[0], "accuracy": self.top_pick[1]},
            "best_possible": self.best_possible,
            "ranking": list(self.ranking),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write_ranking_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "genome_id", "score", "accuracy"])
            for rank, (gid, score, acc) in enumerate(zip(self.ranking, self.scores, self.accuracies), 1):
                w.writerow([rank, gid, repr(score), repr(acc)])


def evaluate_metric(scores, bench, variant: str = "b", include_diverged: bool = True, dataset: str | None = None) -> TauReport:
    """Join score records with benchmark accuracies and compute tau.

    Scores are turned into ordering keys (negated when lower is better), so
    the ranking runs best-first. Ties in the key are broken by genome id.
    """
    scores = list(scores)
    if not scores:
        raise DataError("no score records to evaluate")
    metrics = {s.metric for s in scores}
    if len(metrics) != 1:
        raise DataError(f"evaluate_metric expects a single metric, got {sorted(metrics)}")
    missing = [s.genome_id for s in scores if s.genome_id not in bench]
    if missing:
        raise MissingGenomeError(missing)
    if not include_diverged:
        scores = [s for s in scores if not bench.rows[s.genome_id]["diverged"]]
    keys = np.array([s.ordering_key for s in scores])
    accs = np.array([bench.accuracy(s.genome_id) for s in scores])
    tau = kendall_tau(keys, accs, variant)
    order = sorted(range(len(scores)), key=lambda i: (-keys[i], scores[i].genome_id))
    top = order[0]
    if dataset is None:
        names = {bench.rows[s.genome_id]["dataset"] for s in scores}
        dataset = names.pop() if len(names) == 1 else ",".join(sorted(names))
    return TauReport(
        metric=metrics.pop(),
        dataset=dataset,
        tau=float(tau),
        tau_variant=variant,
        n_architectures=len(scores),
        top_pick=(scores[top].genome_id, float(accs[top])),
        best_possible=float(accs.max()),
        ranking=tuple(scores[i].genome_id for i in order),
        scores=tuple(float(scores[i].score) for i in order),
        accuracies=tuple(float(accs[i]) for i in order),
    )


def mean_tau(reports) -> float:
    """Average tau over per-dataset reports."""
    reports = list(reports)
    if not reports:
        raise DataError("no reports to average")
    return float(np.mean([r.tau for r in reports]))
