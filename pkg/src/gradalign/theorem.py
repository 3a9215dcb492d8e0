"""Empirical certificates for the one-step descent bound under gradient conflict.

For a two-sample loss ``L = l1 + l2`` with M-Lipschitz gradient and a step
``theta+ = theta - lam * (g1 + g2)`` with ``lam <= 1/M``, smoothness gives

    L(theta) - L(theta+) >= (lam - M lam^2 / 2) * ||g1 + g2||^2
                          = (lam - M lam^2 / 2) * (||g1||^2 + 2 g1.g2 + ||g2||^2)

which we call the tight bound. The coarser closed form
``lam/2 * (2G + cos(beta) G^2)`` is reported alongside it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import NetworkInstance, per_sample_gradients, sample_losses
from .errors import PreconditionError

BOUND_FIELDS = ("instance_id", "lambda", "M", "cos_beta", "measured_decrease", "tight_bound", "stated_bound", "holds")


@dataclass(frozen=True)
class CosBeta:
    matrix: np.ndarray
    kept: tuple[int, ...]
    excluded: tuple[int, ...]


def pairwise_cos_beta(grads) -> CosBeta:
    """Cosines of the angles between per-sample gradients.

    Zero rows have no direction; they are dropped and listed in ``excluded``.
    """
    grads = np.asarray(grads, dtype=np.float64)
    norms = np.linalg.norm(grads, axis=1)
    kept = np.flatnonzero(norms > 0)
    excluded = np.flatnonzero(norms == 0)
    unit = grads[kept] / norms[kept, None]
    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    cos = 0.5 * (cos + cos.T)
    np.fill_diagonal(cos, 1.0)
    return CosBeta(cos, tuple(int(i) for i in kept), tuple(int(i) for i in excluded))


def cos_between(g1, g2) -> float:
    n1, n2 = np.linalg.norm(g1), np.linalg.norm(g2)
    if n1 == 0 or n2 == 0:
        return float("nan")
    return float(np.clip(np.dot(g1, g2) / (n1 * n2), -1.0, 1.0))


@dataclass(frozen=True)
class TheoremProbe:
    losses: tuple[Callable, Callable]
    grads: tuple[Callable, Callable]
    M: float
    lam: float
    theta: np.ndarray
    G: float | None = None
    instance_id: str = ""


@dataclass(frozen=True)
class BoundReport:
    instance_id: str
    lam: float
    M: float
    cos_beta: float
    g1_sq: float
    g2_sq: float
    G: float
    measured_decrease: float
    tight_bound: float
    stated_bound: float
    holds: bool
    stated_applicable: bool
    stated_holds: bool

    @property
    def slack(self) -> float:
        return self.measured_decrease - self.tight_bound

    def row(self) -> list:
        return [
            self.instance_id,
            repr(self.lam),
            repr(self.M),
            repr(self.cos_beta),
            repr(self.measured_decrease),
            repr(self.tight_bound),
            repr(self.stated_bound),
            int(self.holds),
        ]


def one_step_bound_check(probe: TheoremProbe, tol: float = 1e-9) -> BoundReport:
    """Take one gradient step on ``l1 + l2`` and compare against both bounds.

    The closed-form bound is only flagged applicable when ``||g1||^2 =
    ||g2||^2 = G <= 2`` and ``cos(beta) >= 0``; outside that region it does
    not follow from the tight bound and is reported without a verdict.
    """
    lam, M = float(probe.lam), float(probe.M)
    if M <= 0:
        raise PreconditionError("smoothness constant M must be positive")
    if lam < 0 or lam > (1.0 / M) * (1 + 1e-12):
        raise PreconditionError(f"learning rate {lam} violates 0 <= lam <= 1/M = {1.0 / M}")
    theta = np.asarray(probe.theta, dtype=np.float64)
    g1 = np.asarray(probe.grads[0](theta), dtype=np.float64)
    g2 = np.asarray(probe.grads[1](theta), dtype=np.float64)
    g = g1 + g2
    theta_plus = theta - lam * g

    def L(t):
        return float(probe.losses[0](t) + probe.losses[1](t))

    measured = L(theta) - L(theta_plus)
    g1_sq, g2_sq = float(g1 @ g1), float(g2 @ g2)
    G = max(g1_sq, g2_sq) if probe.G is None else float(probe.G)
    cos = cos_between(g1, g2)
    tight = (lam - 0.5 * M * lam**2) * (g1_sq + 2.0 * float(g1 @ g2) + g2_sq)
    cos_term = 0.0 if np.isnan(cos) else cos
    stated = 0.5 * lam * (2.0 * G + cos_term * G**2)
    applicable = (
        not np.isnan(cos)
        and cos >= 0
        and np.isclose(g1_sq, G, rtol=1e-12, atol=0)
        and np.isclose(g2_sq, G, rtol=1e-12, atol=0)
        and G <= 2.0
    )
    return BoundReport(
        instance_id=probe.instance_id,
        lam=lam,
        M=M,
        cos_beta=cos,
        g1_sq=g1_sq,
        g2_sq=g2_sq,
        G=G,
        measured_decrease=measured,
        tight_bound=tight,
        stated_bound=stated,
        holds=measured >= tight - tol,
        stated_applicable=bool(applicable),
        stated_holds=measured >= stated - tol,
    )


def quadratic_probe(a1, a2, theta, lam, H1=None, H2=None, instance_id: str = "") -> TheoremProbe:
    """Two quadratic losses ``l_i = 1/2 (t - a_i)^T H_i (t - a_i)``; identity Hessians by default.

    M is the largest eigenvalue of ``H1 + H2``, the exact gradient Lipschitz
    constant of the sum.
    """
    a1, a2 = np.asarray(a1, dtype=np.float64), np.asarray(a2, dtype=np.float64)
    d = a1.size
    H1 = np.eye(d) if H1 is None else np.asarray(H1, dtype=np.float64)
    H2 = np.eye(d) if H2 is None else np.asarray(H2, dtype=np.float64)
    M = float(np.linalg.eigvalsh(H1 + H2).max())

    def loss(a, H):
        return lambda t: 0.5 * float((t - a) @ H @ (t - a))

    def grad(a, H):
        return lambda t: H @ (t - a)

    return TheoremProbe(
        (loss(a1, H1), loss(a2, H2)),
        (grad(a1, H1), grad(a2, H2)),
        M,
        lam,
        np.asarray(theta, dtype=np.float64),
        instance_id=instance_id,
    )


def random_quadratic_probe(rng: np.random.Generator, dim: int = 4, isotropic: bool = False, instance_id: str = "") -> TheoremProbe:
    """Random quadratic instance with ``lam`` drawn uniformly from (0, 1/M]."""
    a1, a2, theta = rng.standard_normal((3, dim))
    if isotropic:
        h1, h2 = rng.uniform(0.1, 3.0, size=2)
        H1, H2 = h1 * np.eye(dim), h2 * np.eye(dim)
    else:
        H1, H2 = (_random_psd(rng, dim) for _ in range(2))
    probe = quadratic_probe(a1, a2, theta, 1.0, H1, H2, instance_id)
    lam = (1.0 - rng.uniform()) / probe.M
    return TheoremProbe(probe.losses, probe.grads, probe.M, lam, probe.theta, instance_id=instance_id)


def _random_psd(rng, dim):
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    return (Q * rng.uniform(0.0, 3.0, size=dim)) @ Q.T


def write_bound_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BOUND_FIELDS)
        for r in reports:
            w.writerow(r.row())


@dataclass(frozen=True)
class SweepRow:
    lam: float
    measured_decrease: float
    cos_mean: float
    cos_min: float
    cos_max: float


def relu_bound_sweep(net: NetworkInstance, probe, lambdas, loss: str = "cross_entropy") -> list[SweepRow]:
    """Measured decrease of the summed probe loss after one step, per learning rate.

    ReLU losses are not globally smooth, so nothing is asserted here; the
    rows record the trend together with cos(beta) statistics.
    """
    lambdas = [float(v) for v in lambdas]
    if any(v <= 0 for v in lambdas):
        raise PreconditionError("learning-rate grid must be positive")
    if any(b > a for a, b in zip(lambdas, lambdas[1:])):
        raise PreconditionError("learning-rate grid must be descending")
    X, y = (probe.X, probe.y) if hasattr(probe, "X") else probe
    grads = per_sample_gradients(net, (X, y), loss)
    cos = pairwise_cos_beta(grads).matrix
    off = cos[~np.eye(len(cos), dtype=bool)]
    stats = (float(off.mean()), float(off.min()), float(off.max())) if off.size else (1.0, 1.0, 1.0)
    theta = net.params.flatten()
    step = grads.sum(axis=0)
    base = float(sample_losses(net, X, y, loss).sum())
    rows = []
    for lam in lambdas:
        after = float(sample_losses(net.with_flat(theta - lam * step), X, y, loss).sum())
        rows.append(SweepRow(lam, base - after, *stats))
    return rows
