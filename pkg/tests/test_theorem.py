import csv

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import random_mlp
from gradalign.errors import PreconditionError
from gradalign.theorem import (
    BOUND_FIELDS,
    one_step_bound_check,
    pairwise_cos_beta,
    quadratic_probe,
    random_quadratic_probe,
    relu_bound_sweep,
    write_bound_csv,
)

LAMBDAS = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5]


def test_cos_beta_fixtures():
    assert pairwise_cos_beta([[1, 0], [0, 1]]).matrix[0, 1] == 0
    assert pairwise_cos_beta([[2, 3], [2, 3]]).matrix[0, 1] == pytest.approx(1.0, abs=1e-15)
    assert pairwise_cos_beta(7 * np.array([[1.0, 1.0], [1.0, -1.0]])).matrix[0, 1] == pytest.approx(0.0, abs=1e-15)


def test_zero_rows_are_excluded():
    cb = pairwise_cos_beta([[1.0, 0.0], [0.0, 0.0], [0.0, 2.0]])
    assert cb.kept == (0, 2) and cb.excluded == (1,)
    assert cb.matrix.shape == (2, 2)


@settings(max_examples=100)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 8), d=st.integers(1, 6))
def test_cos_matrix_shape_properties(seed, n, d):
    m = pairwise_cos_beta(np.random.default_rng(seed).standard_normal((n, d))).matrix
    assert np.array_equal(m, m.T)
    assert np.all(np.diag(m) == 1.0)
    assert np.all(np.abs(m) <= 1.0)


def test_worked_quadratic_example():
    rep = one_step_bound_check(quadratic_probe([1, 0], [0, 1], [0, 0], 0.5))
    assert rep.M == 2.0
    assert abs(rep.measured_decrease - 0.5) < 1e-12
    assert abs(rep.tight_bound - 0.5) < 1e-12
    assert rep.holds and rep.stated_applicable and rep.stated_holds


def test_zero_step():
    rep = one_step_bound_check(quadratic_probe([1, 0], [0, 1], [0.3, 0.2], 0.0))
    assert rep.measured_decrease == 0.0 and rep.tight_bound == 0.0


def test_step_above_inverse_smoothness_rejected():
    with pytest.raises(PreconditionError):
        one_step_bound_check(quadratic_probe([1, 0], [0, 1], [0, 0], 0.51))


def test_random_quadratics_respect_tight_bound():
    rng = np.random.default_rng(0)
    for i in range(1000):
        rep = one_step_bound_check(random_quadratic_probe(rng, dim=int(rng.integers(1, 6))))
        assert 0 < rep.lam <= 1 / rep.M
        assert rep.measured_decrease >= rep.tight_bound - 1e-9


def test_isotropic_quadratics_are_tight():
    rng = np.random.default_rng(1)
    for _ in range(200):
        rep = one_step_bound_check(random_quadratic_probe(rng, isotropic=True))
        assert abs(rep.measured_decrease - rep.tight_bound) < 1e-9


@settings(max_examples=100)
@given(
    n1=st.floats(0.1, 3),
    n2=st.floats(0.1, 3),
    angles=st.lists(st.floats(0, np.pi), min_size=2, max_size=2, unique=True),
    lam=st.floats(0.01, 0.5),
)
def test_tight_bound_increases_with_alignment(n1, n2, angles, lam):
    lo, hi = sorted(angles)
    assume(np.cos(lo) - np.cos(hi) > 1e-6)

    def bound(angle):
        a2 = n2 * np.array([np.cos(angle), np.sin(angle)])
        return one_step_bound_check(quadratic_probe([n1, 0.0], a2, [0.0, 0.0], lam)).tight_bound

    assert bound(lo) > bound(hi)


def test_aligned_pair_beats_opposed_pair():
    aligned = one_step_bound_check(quadratic_probe([1, 1], [1, 1], [0, 0], 0.5))
    opposed = one_step_bound_check(quadratic_probe([1, 1], [-1, -1], [0, 0], 0.5))
    assert aligned.measured_decrease > opposed.measured_decrease == 0.0


def test_closed_form_needs_small_gradients():
    # equal norms and cos = 1, but G = 4 pushes the closed form past the true decrease
    rep = one_step_bound_check(quadratic_probe([2, 0], [2, 0], [0, 0], 0.5))
    assert rep.G == 4.0 and rep.holds
    assert rep.measured_decrease == 4.0 and rep.stated_bound == 6.0
    assert not rep.stated_applicable and not rep.stated_holds


def test_bound_csv(tmp_path):
    rng = np.random.default_rng(2)
    reps = [one_step_bound_check(random_quadratic_probe(rng, instance_id=f"q{i}")) for i in range(3)]
    path = tmp_path / "bounds.csv"
    write_bound_csv(reps, path)
    rows = list(csv.DictReader(path.open()))
    assert tuple(rows[0]) == BOUND_FIELDS
    assert [r["instance_id"] for r in rows] == ["q0", "q1", "q2"]
    assert float(rows[1]["tight_bound"]) == reps[1].tight_bound


def test_sweep_grid_validation(rng):
    net, _ = random_mlp(rng, 0, dims=[2, 4, 3])
    probe = (rng.standard_normal((2, 2)), np.array([0, 1]))
    with pytest.raises(PreconditionError):
        relu_bound_sweep(net, probe, [1e-3, 1e-2])
    with pytest.raises(PreconditionError):
        relu_bound_sweep(net, probe, [1e-2, 0.0])


def test_small_steps_decrease_relu_loss():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        net, dims = random_mlp(rng, seed)
        X = rng.standard_normal((2, dims[0]))
        y = rng.integers(0, dims[-1], size=2)
        rows = relu_bound_sweep(net, (X, y), LAMBDAS)
        hits += rows[-1].measured_decrease >= 0
    assert hits >= 95


def test_duplicated_sample_quadruples_decrease(rng):
    net, _ = random_mlp(rng, 4, dims=[2, 8, 8, 3])
    x = rng.standard_normal((1, 2))
    single = relu_bound_sweep(net, (x, np.array([1])), LAMBDAS)[-1]
    double = relu_bound_sweep(net, (np.vstack([x, x]), np.array([1, 1])), LAMBDAS)[-1]
    assert double.cos_mean == pytest.approx(1.0)
    assert double.measured_decrease == pytest.approx(4 * single.measured_decrease, rel=1e-3)


def test_label_flip_shrinks_decrease():
    # two classes: aligned sum is 2 p_other h, flipped sum is |2 p_other - 1| h,
    # so duplicating the label the net ranks lower makes the flip strictly smaller
    from gradalign.autodiff import forward

    for seed in range(20):
        rng = np.random.default_rng(seed)
        net, _ = random_mlp(rng, seed, dims=[2, 8, 2])
        x = rng.standard_normal((1, 2))
        weak = int(np.argmin(forward(net, x[0]).logits))
        X = np.vstack([x, x])
        same = relu_bound_sweep(net, (X, np.array([weak, weak])), LAMBDAS[2:])
        flip = relu_bound_sweep(net, (X, np.array([weak, 1 - weak])), LAMBDAS[2:])
        assert flip[0].cos_mean == pytest.approx(-1.0)
        for a, b in zip(same, flip):
            assert b.measured_decrease < a.measured_decrease
