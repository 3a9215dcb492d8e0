import math
from dataclasses import asdict

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradalign.archspace import ArchGenome
from gradalign.errors import InsufficientProbeError, UsageError
from gradalign.harness import ProbeSet
from gradalign.metrics import (
    METRICS,
    class_scores,
    get_metric,
    grad_norm_score,
    gradalign1,
    gradalign2,
    gradsign_score,
    gram_matrix,
    hamming_kernel,
    naswot_score,
    score_architecture,
    sign_matrix,
)

G1 = np.array([1.0, -2.0, 0.5])
G2 = np.array([2.0, -1.0, -3.0])

grad_mats = arrays(
    np.float64,
    st.tuples(st.integers(2, 6), st.integers(1, 8)),
    elements=st.floats(-10, 10, allow_nan=False, allow_infinity=False, allow_subnormal=False),
)
sign_mats = arrays(np.int8, st.tuples(st.integers(2, 6), st.integers(2, 8)), elements=st.sampled_from([-1, 1]))


def ga1_raw(grads):
    return gradalign1(sign_matrix(grads), grads.mean(axis=0))


def test_sign_matrix_basic():
    np.testing.assert_array_equal(sign_matrix([[1.0, -2.0, 0.0]]), [[1, -1, 0]])
    np.testing.assert_array_equal(sign_matrix(np.full((2, 3), 0.1)), np.ones((2, 3)))


def test_gradalign1_hand_case():
    grads = np.stack([G1, G2])
    np.testing.assert_array_equal(sign_matrix(grads), [[1, -1, 1], [1, -1, -1]])
    assert ga1_raw(grads) == 2.0


def test_gradalign1_uses_mean_of_raw_gradients():
    # mean of signs in the last coordinate is 0, mean of raw values is -1.25
    grads = np.stack([G1, G2])
    assert gradalign1(sign_matrix(grads), sign_matrix(grads).mean(axis=0)) == 2.0 - 0.0
    assert np.sign(grads.mean(axis=0))[2] == -1


def test_gradalign1_extremes():
    g = np.array([0.3, -1.0, 2.0, 4.0])
    assert ga1_raw(np.tile(g, (5, 1))) == 4.0
    assert ga1_raw(np.stack([g, -g])) == 0.0


def test_gradalign2_fixtures():
    assert abs(gradalign2([[1, 1], [1, -1]]) - math.log(4)) < 1e-12
    assert abs(gradalign2([[1, 1], [1, 1]]) - (math.log(4) + math.log(1e-6))) < 1e-9
    assert abs(gradalign2([[1, 1], [1, 1]]) - (-12.4292)) < 1e-4
    assert gradalign2([[1, 0, -1, 1, 0]]) == pytest.approx(math.log(3), abs=1e-12)


def test_gradsign_fixtures():
    assert gradsign_score([[1, -1], [1, 1]]) == 2
    assert gradsign_score([[1, -1, 1]] * 4) == 12
    assert gradsign_score([[1, 1], [-1, -1]]) == 0


def test_naswot_fixtures():
    assert abs(naswot_score(np.array([[1, 0], [1, 1]])) - math.log(3)) < 1e-12
    assert abs(naswot_score(np.array([[1, 1, 0, 0], [0, 0, 1, 1]])) - math.log(16)) < 1e-12
    degenerate = naswot_score(np.array([[1, 0, 1], [1, 0, 1]]))
    assert math.isfinite(degenerate) and degenerate < -10
    np.testing.assert_array_equal(hamming_kernel([[1, 0], [1, 1]]), [[2, 1], [1, 2]])
    with pytest.raises(InsufficientProbeError):
        naswot_score(np.array([[1, 0]]))


def test_grad_norm_fixtures():
    assert grad_norm_score(np.zeros((3, 4))) == 0
    assert grad_norm_score([[3.0, 4.0]]) == 5.0
    assert grad_norm_score([[1.0, 0.0], [0.0, 1.0]]) == pytest.approx(math.sqrt(0.5), abs=1e-15)


@settings(max_examples=100)
@given(grads=grad_mats, data=st.data())
def test_positive_row_scaling(grads, data):
    scale = data.draw(arrays(np.float64, grads.shape[0], elements=st.floats(0.01, 100)))
    scaled = grads * scale[:, None]
    assert gradalign2(sign_matrix(scaled)) == gradalign2(sign_matrix(grads))
    assert gradsign_score(sign_matrix(scaled)) == gradsign_score(sign_matrix(grads))
    c = float(scale[0])
    assert ga1_raw(grads * c) == ga1_raw(grads)


@settings(max_examples=100)
@given(grads=grad_mats, data=st.data())
def test_row_permutation_invariance(grads, data):
    perm = data.draw(st.permutations(range(grads.shape[0])))
    shuffled = grads[list(perm)]
    codes = (grads > 0).astype(np.int8)
    for fn in (ga1_raw, grad_norm_score):
        assert fn(shuffled) == pytest.approx(fn(grads), rel=1e-12, abs=1e-12)
    assert gradalign2(sign_matrix(shuffled)) == pytest.approx(gradalign2(sign_matrix(grads)), abs=1e-9)
    assert gradsign_score(sign_matrix(shuffled)) == gradsign_score(sign_matrix(grads))
    assert naswot_score(codes[list(perm)]) == pytest.approx(naswot_score(codes), abs=1e-9)


@settings(max_examples=100)
@given(grads=grad_mats)
def test_gradalign1_bounds(grads):
    d = grads.shape[1]
    s = ga1_raw(grads)
    assert -d <= s <= d
    signs = sign_matrix(grads)
    target = np.sign(grads.mean(axis=0))
    perfect = np.all(signs != 0) and np.all(signs == target)
    assert (s == d) == perfect


@settings(max_examples=100)
@given(signs=sign_mats)
def test_gram_is_psd(signs):
    assert np.linalg.eigvalsh(gram_matrix(signs)).min() >= -1e-9


@settings(max_examples=100)
@given(signs=sign_mats, data=st.data())
def test_duplicate_row_lowers_gradalign2(signs, data):
    assume(len({r.tobytes() for r in signs}) == len(signs))
    k = data.draw(st.integers(0, len(signs) - 1))
    dup = np.vstack([signs, signs[k : k + 1]])
    assert gradalign2(dup) < gradalign2(signs)


@pytest.mark.parametrize("d", [4, 8])
def test_conflict_ordering(d):
    # second sample flips k of d coordinates: cos(beta) = 1 - 2k/d
    g1 = np.ones(d)
    scores = []
    for k in range(d + 1):
        g2 = g1.copy()
        g2[:k] = -1
        scores.append(ga1_raw(np.stack([g1, g2])))
    assert scores == [float(d - k) for k in range(d + 1)]
    assert all(a > b for a, b in zip(scores, scores[1:]))


def test_class_loop_skips_small_classes_for_pairwise_metrics():
    grads = np.array([[1.0, 1.0], [1.0, -1.0], [2.0, 2.0]])
    labels = np.array([0, 0, 1])
    classes, scores = class_scores("gradalign2", grads, labels)
    assert classes == [0] and scores == [pytest.approx(math.log(4))]
    classes, scores = class_scores("gradalign1", grads, labels)
    assert classes == [0, 1]
    with pytest.raises(InsufficientProbeError):
        class_scores("gradalign2", grads, np.array([0, 1, 2]))


def test_unknown_metric_lists_valid_names():
    with pytest.raises(UsageError, match="gradalign1"):
        get_metric("synflow")


def _fixture_probe(labels):
    labels = np.asarray(labels)
    return ProbeSet(np.zeros((len(labels), 2)), labels, int(labels.max()) + 1, "fixture", 0)


def test_score_architecture_with_injected_gradients():
    genome = ArchGenome.uniform("skip", width=2)
    other = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]])
    fixtures = np.vstack([np.stack([G1, G2]), other])

    def inject(net, X, y):
        return fixtures

    rec = score_architecture(genome, _fixture_probe([0, 0, 1, 1]), "gradalign1", 0, gradient_fn=inject)
    assert rec.class_scores == (2.0, 3.0)
    assert rec.score == 2.5
    assert rec.num_params == 3 and rec.score_normalized == 2.5 / 3

    single = score_architecture(genome, _fixture_probe([0, 0]), "gradalign1", 0, gradient_fn=lambda n, X, y: fixtures[:2])
    assert single.score == single.class_scores[0] == 2.0


def test_records_differ_only_in_metric_fields():
    from gradalign.harness import build_probe
    from gradalign.oracle import generate_dataset

    probe = build_probe(generate_dataset("blobs", seed=0), 16, seed=0)
    genome = ArchGenome(("dense-relu", "skip", "zero", "dense-linear", "bottleneck-relu", "skip"), 8, 1)
    a = asdict(score_architecture(genome, probe, "gradalign1", 0))
    b = asdict(score_architecture(genome, probe, "gradsign", 0))
    differ = {k for k in a if a[k] != b[k]}
    assert differ <= {"metric", "score", "class_scores", "higher_is_better", "wall_ms"}
    assert {"metric", "score"} <= differ


def test_registry_directions():
    assert not METRICS["gradalign2"].higher_is_better
    assert all(METRICS[m].higher_is_better for m in ("gradalign1", "gradsign", "naswot", "gradnorm"))
