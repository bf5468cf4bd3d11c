import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankssda.errors import InputError, ProtocolError, ShapeError
from rankssda.losses import (cda_loss, cross_entropy, one_hot, ranking_loss, ranking_loss_grad,
                             relative_label, total_loss)

finite = st.floats(min_value=-50, max_value=50, allow_nan=False)
rel = st.sampled_from([0.0, 0.5, 1.0])


@pytest.mark.parametrize("yi,yj,expected", [(3, 1, 1.0), (2, 2, 0.5), (1, 4, 0.0)])
def test_relative_label(yi, yj, expected):
    assert relative_label(yi, yj) == expected


@pytest.mark.parametrize("yi,yj", [(0, 1), (1, -1), (5, 2)])
def test_relative_label_out_of_range(yi, yj):
    with pytest.raises(InputError):
        relative_label(yi, yj, num_classes=4)


def test_ranking_loss_tie_is_ln2():
    assert abs(ranking_loss(0.3, 0.3, 0.5) - math.log(2)) < 1e-9


def test_ranking_loss_known_value():
    # ln(1 + e^-2), evaluated with mpmath at 30 digits
    assert ranking_loss(2.5, 0.5, 1.0) == pytest.approx(0.126928011042972496, abs=1e-12)


def test_ranking_loss_saturates():
    assert ranking_loss(50.0, 0.0, 1.0) < 1e-12


def test_ranking_loss_clamp_keeps_it_finite():
    assert ranking_loss(0.0, 50.0, 1.0) == pytest.approx(-math.log(1e-12))


def test_ranking_loss_rejects_nan():
    with pytest.raises(InputError):
        ranking_loss(float("nan"), 0.0, 1.0)


@given(finite, finite, rel)
def test_pair_swap_symmetry(ri, rj, o):
    assert abs(ranking_loss(ri, rj, o) - ranking_loss(rj, ri, 1 - o)) <= 1e-12


@given(finite, finite, rel)
def test_ranking_loss_nonnegative(ri, rj, o):
    assert ranking_loss(ri, rj, o) >= 0


@given(st.floats(min_value=-20, max_value=20), rel)
def test_ranking_grad_matches_difference_quotient(d, o):
    h = 1e-6
    numeric = (ranking_loss(d + h, 0.0, o) - ranking_loss(d - h, 0.0, o)) / (2 * h)
    assert ranking_loss_grad(d, 0.0, o) == pytest.approx(numeric, abs=1e-7)


def test_ranking_loss_minimum_for_tie_is_at_zero_difference():
    d = np.linspace(-3, 3, 601)
    losses = ranking_loss(d, np.zeros_like(d), np.full_like(d, 0.5))
    assert d[np.argmin(losses)] == pytest.approx(0.0, abs=1e-12)


def test_ranking_loss_monotone_for_strict_labels():
    d = np.linspace(-10, 10, 101)
    assert np.all(np.diff(ranking_loss(d, 0 * d, np.ones_like(d))) < 0)
    assert np.all(np.diff(ranking_loss(d, 0 * d, np.zeros_like(d))) > 0)


def test_cross_entropy_cases():
    assert cross_entropy(np.array([0.0, 1.0, 0.0]), 2) <= 1e-12
    assert cross_entropy(np.full(4, 0.25), 3) == pytest.approx(math.log(4), abs=1e-12)
    assert cross_entropy(np.array([0.7, 0.2, 0.1]), 1) == pytest.approx(0.356674943938732379, abs=1e-12)


def test_cross_entropy_bad_class():
    with pytest.raises(InputError):
        cross_entropy(np.full(3, 1 / 3), 4)


def test_cda_loss_cases():
    mu = np.array([-1.0, 0.5, 2.0])
    assert cda_loss(0.5, [0, 1, 0], mu) == 0.0
    assert cda_loss(1.0, [0.5, 0.5], [0.0, 2.0]) == 1.0
    assert cda_loss(0.5 + 0.3, [0, 1, 0], mu) == pytest.approx(0.09, abs=1e-15)
    with pytest.raises(ShapeError):
        cda_loss(0.0, [1.0, 0.0], mu)


@given(finite, st.lists(st.floats(0, 1), min_size=3, max_size=3),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_cda_loss_nonnegative(r, w, mu):
    assert cda_loss(r, w, mu) >= 0


@pytest.fixture
def batch():
    rng = np.random.default_rng(0)
    probs = rng.dirichlet(np.ones(3), size=4)
    scores = rng.normal(size=4)
    labels = np.array([1, 3, 2, -1])
    pairs = np.array([[0, 1], [2, 0]])
    soft = np.vstack([one_hot(labels[:3], 3), [[0.1, 0.6, 0.3]]])
    mu = np.array([-1.0, 0.0, 1.0])
    return probs, scores, labels, pairs, soft, mu


def test_total_loss_matches_term_by_term_sum(batch):
    probs, scores, labels, pairs, soft, mu = batch
    lam = 0.25
    pair_terms = [
        cross_entropy(probs[i], labels[i]) + cross_entropy(probs[j], labels[j])
        + ranking_loss(scores[i], scores[j], relative_label(labels[i], labels[j]))
        for i, j in pairs
    ]
    align_terms = [cda_loss(scores[k], soft[k], mu) for k in range(4)]
    expected = np.mean(pair_terms) + lam * np.mean(align_terms)
    assert total_loss(probs, scores, labels, pairs, soft, mu, lam).total == pytest.approx(expected, abs=1e-12)


def test_total_loss_lambda_zero_drops_alignment(batch):
    probs, scores, labels, pairs, soft, mu = batch
    t = total_loss(probs, scores, labels, pairs, soft, mu, 0.0)
    assert t.total == t.classification + t.ranking
    assert t.alignment > 0


def test_total_loss_linear_in_lambda(batch):
    probs, scores, labels, pairs, soft, mu = batch
    vals = [total_loss(probs, scores, labels, pairs, soft, mu, lam).total for lam in (0.0, 1.0, 2.0, 5.0)]
    slope = vals[1] - vals[0]
    for lam, v in zip((2.0, 5.0), vals[2:]):
        assert v == pytest.approx(vals[0] + lam * slope, abs=1e-12)


def test_total_loss_zero_case():
    probs = np.array([[1.0, 0.0], [0.0, 1.0]])
    scores = np.array([0.0, 0.0])
    t = total_loss(probs, scores, np.array([1, 2]), np.zeros((0, 2)), one_hot([1, 2], 2),
                   np.zeros(2), 1.0)
    assert t.total == 0.0


def test_unlabeled_member_in_pair_is_rejected(batch):
    probs, scores, labels, _, soft, mu = batch
    with pytest.raises(ProtocolError):
        total_loss(probs, scores, labels, np.array([[0, 3]]), soft, mu, 1.0)
