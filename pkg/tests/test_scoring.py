import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from clm.convex import FeasibleSet, HalfSquaredNorm, NegativeEntropy
from clm.errors import DomainError, InfeasibleMeanError
from clm.scoring import (
    Batch,
    Belief,
    OutcomeSpace,
    audit_minimizer,
    compression_gsr,
    divergence_gsr,
    expected_loss,
    label_gsr,
    mean_minimizer,
    minimize_expected_loss,
    regression_gsr,
    squared_distance_gsr,
)

import oracles

LN2 = 0.6931471805599453
H_QUARTER = 0.5623351446188084  # entropy of (1/4, 3/4), from the mpmath oracle


def prob(n):
    return arrays(np.float64, n, elements=st.floats(0.02, 1.0)).map(lambda v: v / v.sum())


def test_outcome_spaces():
    assert OutcomeSpace.finite(4).enumerate() == [0, 1, 2, 3]
    rng = np.random.default_rng(0)
    space = OutcomeSpace.dataset_batch(3, batch_size=5)
    for b in space.sample(rng, 20):
        space.validate(b)
    labels = OutcomeSpace.label_vector(2, (0, 1))
    for y in labels.sample(rng, 20):
        labels.validate(y)
    with pytest.raises(DomainError):
        labels.validate(np.array([2.0, 0.0]))
    with pytest.raises(DomainError):
        OutcomeSpace.label_vector(2, (0, np.inf))


def test_outcome_codec_round_trip():
    space = OutcomeSpace.dataset_batch(2)
    b = Batch([[0.1, 0.2]], [0.5])
    assert space.decode(space.encode(b)) == b
    P = Belief([0, 1], [0.25, 0.75])
    fin = OutcomeSpace.finite(2)
    back = fin.decode(fin.encode(P))
    assert back.support == [0, 1] and np.array_equal(back.weights, P.weights)


def test_belief_validation():
    with pytest.raises(DomainError):
        Belief([0, 1], [0.5, 0.6])
    with pytest.raises(DomainError):
        Belief([0, 1], [1.5, -0.5])
    P = Belief.empirical([1, 1, 0, 1])
    assert np.allclose(P.probabilities(2), [0.25, 0.75])


def test_expected_loss_examples():
    L = compression_gsr(2)
    assert expected_loss(L, [0.5, 0.5], Belief.point(0)) == pytest.approx(LN2, abs=1e-15)
    assert expected_loss(L, [0.25, 0.75], Belief.over_finite([0.25, 0.75])) == pytest.approx(H_QUARTER, abs=1e-15)
    with pytest.raises(DomainError):
        expected_loss(L, [0.7, 0.7], Belief.point(0))


def test_compression_loss_is_divergence():
    L = compression_gsr(3)
    R = NegativeEntropy(3)
    q = np.array([0.2, 0.5, 0.3])
    for i in range(3):
        e = np.eye(3)[i]
        assert L.loss(q, i) == pytest.approx(R.bregman(e, q), abs=1e-12)


def test_minimize_expected_loss_examples():
    P = Belief.over_finite([0.25, 0.75])
    w = minimize_expected_loss(compression_gsr(2, 1e-9), P)
    assert np.allclose(w, [0.25, 0.75], atol=1e-6)

    L = regression_gsr(1)
    w = minimize_expected_loss(L, Belief.point(Batch([[1.0]], [1.0])))
    assert w[0] == pytest.approx(1.0, abs=1e-7)

    box = FeasibleSet.box(2, 0, 1)
    sq = squared_distance_gsr(box, OutcomeSpace.label_vector(2, (0, 1)))
    w = minimize_expected_loss(sq, Belief.uniform([np.zeros(2), np.ones(2)]))
    assert np.allclose(w, [0.5, 0.5], atol=1e-6)


def test_mean_minimizer_examples():
    assert np.allclose(mean_minimizer(compression_gsr(2), Belief.over_finite([0.25, 0.75])), [0.25, 0.75])
    sq = squared_distance_gsr(FeasibleSet.all_of(2), OutcomeSpace.label_vector(2, (0, 2)))
    w = mean_minimizer(sq, Belief.uniform([np.array([0.0, 0.0]), np.array([2.0, 0.0])]))
    assert np.allclose(w, [1.0, 0.0])
    assert np.allclose(mean_minimizer(sq, Belief.point(np.array([0.5, 1.5]))), [0.5, 1.5])


def test_mean_minimizer_infeasible():
    L = compression_gsr(2, floor=0.1)
    with pytest.raises(InfeasibleMeanError):
        mean_minimizer(L, Belief.point(0))
    with pytest.raises(DomainError):
        mean_minimizer(regression_gsr(1), Belief.point(Batch([[1.0]], [1.0])))


def test_mean_minimizer_with_psi():
    # hypotheses are log-odds, psi maps them to the simplex
    psi = lambda t: np.stack([1 / (1 + np.exp(-t[..., 0])), 1 - 1 / (1 + np.exp(-t[..., 0]))], -1)  # noqa: E731
    psi_inv = lambda p: np.array([np.log(p[0] / p[1])])  # noqa: E731
    eye = np.eye(2)
    L = divergence_gsr(NegativeEntropy(2), lambda i: eye[i], FeasibleSet.box(1, -10, 10),
                       OutcomeSpace.finite(2), psi=psi, psi_inv=psi_inv)
    w = mean_minimizer(L, Belief.over_finite([0.25, 0.75]))
    assert w[0] == pytest.approx(np.log(1 / 3), abs=1e-12)


def test_psi_without_inverse_rejected():
    with pytest.raises(DomainError):
        divergence_gsr(HalfSquaredNorm(1), lambda X: X, FeasibleSet.all_of(1),
                       OutcomeSpace.label_vector(1, (0, 1)), psi=lambda w: 2 * w)


@settings(max_examples=25, deadline=None)
@given(prob(3))
def test_mean_minimizer_matches_solver(p):
    L = compression_gsr(3, 1e-9)
    P = Belief.over_finite(p)
    a = expected_loss(L, mean_minimizer(L, P), P)
    b = expected_loss(L, minimize_expected_loss(L, P), P)
    assert abs(a - b) <= 1e-5


@settings(max_examples=50, deadline=None)
@given(prob(3), prob(3))
def test_expected_divergence_identity(p, w):
    L = compression_gsr(3)
    P = Belief.over_finite(p)
    star = mean_minimizer(L, P)
    lhs = expected_loss(L, w, P) - expected_loss(L, star, P)
    assert lhs == pytest.approx(oracles.kl(p, w) - oracles.kl(p, star), abs=1e-7)


def test_audit_minimizer_certifies_mean():
    L = compression_gsr(3, 1e-9)
    P = Belief.over_finite([0.2, 0.3, 0.5])
    assert audit_minimizer(L, P, mean_minimizer(L, P)) <= 1e-6


def test_label_and_regression_losses():
    L = label_gsr(2, (0, 1))
    assert L.loss(np.array([0.5, 0.5]), np.array([0.0, 1.0])) == pytest.approx(0.5)
    R = regression_gsr(1)
    X = Batch([[1.0]], [1.0])
    assert R.loss(np.array([0.0]), X) == pytest.approx(0.5)
    assert R.loss(np.array([1.0]), X) == 0.0
    assert not R.divergence_based
