"""Training-free architecture scores computed from a probe batch at init.

GradAlign-I measures how well each sample's sign gradient agrees with the
sign of the class-mean gradient; GradAlign-II is the log-determinant of the
Gram matrix of sign gradients. GradSign, a NASWOT-style activation kernel and
the gradient norm are provided as baselines. Every metric is evaluated per
class and averaged over classes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .archspace import ArchGenome, build_network
from .autodiff import NetworkInstance, forward_batch, per_sample_gradients
from .errors import EmptyInputError, InsufficientProbeError, UsageError

LOGDET_EPS = 1e-6


def sign_matrix(grads) -> np.ndarray:
    """Element-wise sign with sign(0) = 0, as int8."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.size == 0:
        raise EmptyInputError("gradient matrix is empty")
    return np.sign(grads).astype(np.int8)


def gradalign1(signs, mean_grad) -> float:
    """Mean dot product of each sign row with ``sign(mean_grad)``.

    ``mean_grad`` must be the mean of the raw gradients, not of their signs.
    """
    signs = np.asarray(signs, dtype=np.float64)
    target = np.sign(np.asarray(mean_grad, dtype=np.float64))
    return float((signs @ target).mean())


def clamped_logdet(K, eps: float = LOGDET_EPS) -> float:
    """log det of a symmetric PSD matrix, eigenvalues clamped below at ``eps``."""
    K = np.asarray(K, dtype=np.float64)
    eig = np.linalg.eigvalsh(0.5 * (K + K.T))
    return float(np.log(np.maximum(eig, eps)).sum())


def gram_matrix(signs) -> np.ndarray:
    s = np.asarray(signs, dtype=np.float64)
    return s @ s.T


def gradalign2(signs) -> float:
    """log det of the sign-gradient Gram matrix; lower is better."""
    return clamped_logdet(gram_matrix(signs))


def gradsign_score(signs) -> float:
    return float(np.abs(np.asarray(signs, dtype=np.int64).sum(axis=0)).sum())


def hamming_kernel(codes) -> np.ndarray:
    """K[i, j] = N_A - Hamming(code_i, code_j) for binary codes."""
    c = np.asarray(codes, dtype=np.float64)
    return c @ c.T + (1.0 - c) @ (1.0 - c).T


def naswot_score(traces) -> float:
    """Clamped log det of the activation-code Hamming kernel.

    Accepts a list of ForwardTrace objects or an ``(N, N_A)`` binary array.
    """
    if isinstance(traces, np.ndarray):
        codes = traces
    else:
        codes = np.stack([t.activation_code for t in traces])
    if codes.shape[0] < 2:
        raise InsufficientProbeError("naswot needs at least 2 activation codes")
    return clamped_logdet(hamming_kernel(codes))


def grad_norm_score(grads) -> float:
    grads = np.asarray(grads, dtype=np.float64)
    return float(np.linalg.norm(grads.mean(axis=0)))


@dataclass(frozen=True)
class Metric:
    name: str
    higher_is_better: bool
    min_class_size: int
    needs_codes: bool
    fn: Callable


def _ga1(grads, codes):
    return gradalign1(sign_matrix(grads), grads.mean(axis=0))


METRICS = {
    m.name: m
    for m in (
        Metric("gradalign1", True, 1, False, _ga1),
        Metric("gradalign2", False, 2, False, lambda g, c: gradalign2(sign_matrix(g))),
        Metric("gradsign", True, 1, False, lambda g, c: gradsign_score(sign_matrix(g))),
        Metric("naswot", True, 2, True, lambda g, c: naswot_score(c)),
        Metric("gradnorm", True, 1, False, lambda g, c: grad_norm_score(g)),
    )
}

NORMALIZED_METRICS = ("gradalign1",)


def get_metric(name: str) -> Metric:
    try:
        return METRICS[name]
    except KeyError:
        raise UsageError(f"unknown metric {name!r}; valid names: {', '.join(METRICS)}") from None


@dataclass(frozen=True)
class ScoreRecord:
    genome_id: str
    metric: str
    score: float
    higher_is_better: bool
    class_scores: tuple[float, ...]
    classes: tuple[int, ...]
    probe_seed: int
    probe_size: int
    num_params: int
    wall_ms: float = 0.0

    @property
    def score_normalized(self) -> float | None:
        if self.metric in NORMALIZED_METRICS and self.num_params:
            return self.score / self.num_params
        return None

    @property
    def ordering_key(self) -> float:
        return self.score if self.higher_is_better else -self.score


def class_scores(metric: str | Metric, grads, labels, codes=None) -> tuple[list[int], list[float]]:
    """Per-class scores; classes too small for the metric are skipped."""
    m = metric if isinstance(metric, Metric) else get_metric(metric)
    labels = np.asarray(labels)
    classes, scores = [], []
    for c in np.unique(labels):
        rows = labels == c
        if rows.sum() < m.min_class_size:
            continue
        g = None if grads is None else np.asarray(grads)[rows]
        k = None if codes is None else np.asarray(codes)[rows]
        classes.append(int(c))
        scores.append(float(m.fn(g, k)))
    if not scores:
        raise InsufficientProbeError(
            f"no class has at least {m.min_class_size} samples for metric {m.name!r}"
        )
    return classes, scores


def score_network(
    net: NetworkInstance,
    probe,
    metric: str,
    gradient_fn: Callable | None = None,
    genome_id: str | None = None,
) -> ScoreRecord:
    """Score an initialized network. ``gradient_fn(net, X, y)`` overrides autodiff."""
    m = get_metric(metric)
    start = time.perf_counter()
    X, y = np.asarray(probe.X), np.asarray(probe.y)
    if X.shape[0] == 0:
        raise EmptyInputError("probe contains no samples")
    grads = codes = None
    if m.needs_codes:
        codes = forward_batch(net, X).activation_code
    elif gradient_fn is not None:
        grads = np.asarray(gradient_fn(net, X, y), dtype=np.float64)
    else:
        grads = per_sample_gradients(net, (X, y))
    classes, scores = class_scores(m, grads, y, codes)
    wall_ms = (time.perf_counter() - start) * 1e3
    d = grads.shape[1] if grads is not None else net.num_params
    return ScoreRecord(
        genome_id=genome_id if genome_id is not None else net.name,
        metric=m.name,
        score=float(np.mean(scores)),
        higher_is_better=m.higher_is_better,
        class_scores=tuple(scores),
        classes=tuple(classes),
        probe_seed=int(getattr(probe, "seed", 0)),
        probe_size=int(X.shape[0]),
        num_params=int(d),
        wall_ms=wall_ms,
    )


def score_architecture(
    genome: ArchGenome,
    probe,
    metric: str,
    seed: int,
    gradient_fn: Callable | None = None,
) -> ScoreRecord:
    """Decode and initialize ``genome`` with ``seed``, then score it on ``probe``."""
    get_metric(metric)
    start = time.perf_counter()
    net = build_network(genome, probe.X.shape[1], probe.num_classes, seed)
    record = score_network(net, probe, metric, gradient_fn, genome.id)
    return replace(record, wall_ms=(time.perf_counter() - start) * 1e3)
