import copy

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from clm.errors import (
    BatchError,
    ConfigError,
    DomainError,
    LedgerStateError,
    RejectedBid,
    ScheduleError,
)
from clm.markets import (
    CompressionMarket,
    LabelMarket,
    RegressionMarket,
    compression_clm,
    encoding_cost,
    label_clm,
    load_batch,
    mechanism_cost,
    mini_payout,
    regression_clm,
    settle_by_empirical,
    settle_by_sample,
    spec_from_header,
    total_expected_cost,
)
from clm.mechanism import open_ledger, post_bid, settle, worst_case_loss
from clm.scoring import Batch, Belief

import oracles

LN2 = 0.6931471805599453


def prob(n):
    return arrays(np.float64, n, elements=st.floats(0.02, 1.0)).map(lambda v: v / v.sum())


# --- compression -------------------------------------------------------------------


def test_compression_bid_payouts():
    market = CompressionMarket(2)
    spec = compression_clm(market)
    led = open_ledger(spec)
    _, cost = post_bid(led, spec, "a", [0.75, 0.25])
    assert cost == pytest.approx(LN2, abs=1e-15)
    for i in (0, 1):
        expected, _ = oracles.compression_payout([0.5, 0.5], [0.75, 0.25], i)
        assert spec.payout([0.5, 0.5], [0.75, 0.25], i) == pytest.approx(expected, abs=1e-15)
    # profit is the drop in code length of the realized character
    assert spec.profit([0.5, 0.5], [0.75, 0.25], 0) == pytest.approx(np.log(1.5), abs=1e-15)


def test_compression_null_and_infinite_bids():
    spec = compression_clm(CompressionMarket(3))
    q = spec.initial_hypothesis
    assert spec.cost(q, q) == 0.0
    assert all(spec.payout(q, q, i) == 0.0 for i in range(3))
    led = open_ledger(spec)
    with pytest.raises(RejectedBid):
        post_bid(led, spec, "a", [0.5, 0.5, 0.0])
    assert led.records == []


def test_compression_market_validation():
    with pytest.raises(DomainError):
        CompressionMarket(2, q0=[1.0, 0.0])
    with pytest.raises(DomainError):
        CompressionMarket(2, stream=[0, 2])
    with pytest.raises(DomainError):
        CompressionMarket(2).empirical()


def _comp_ledger(market):
    spec = compression_clm(market)
    led = open_ledger(spec)
    post_bid(led, spec, "a", [0.6, 0.3, 0.1])
    post_bid(led, spec, "b", [0.5, 0.2, 0.3])
    post_bid(led, spec, "a", [0.55, 0.25, 0.2])
    return spec, led


def test_empirical_settlement_averages_samples():
    market = CompressionMarket(3, stream=[0, 0, 1, 2, 0, 1])
    spec, led = _comp_ledger(market)
    empirical = settle_by_empirical(market, led, spec)
    totals = {"a": 0.0, "b": 0.0}
    for i in market.stream:
        _, one = _comp_ledger(market)
        for name, v in settle(one, spec, i).items():
            totals[name] += v / len(market.stream)
    for name in totals:
        assert empirical[name] == pytest.approx(totals[name], abs=1e-12)


def test_sample_settlement_is_seeded():
    market = CompressionMarket(3, stream=[0, 1, 2, 2, 1], sample_seed=7)
    spec, a = _comp_ledger(market)
    _, b = _comp_ledger(market)
    assert settle_by_sample(market, a, spec=spec) == settle_by_sample(market, b, spec=spec)
    assert a.settlement.outcome == b.settlement.outcome
    assert a.settlement.outcome in market.stream


def test_total_expected_cost_example():
    market = CompressionMarket(2, alpha=0.5)
    p = [0.25, 0.75]
    expected = oracles.entropy(p) + 0.5 * oracles.kl(p, [0.5, 0.5])
    assert total_expected_cost(market, p, p) == pytest.approx(expected, abs=1e-12)
    assert total_expected_cost(market, p, Belief.over_finite(p)) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6).flatmap(lambda n: st.tuples(prob(n), prob(n), prob(n))))
def test_unit_alpha_cost_ignores_final_estimate(args):
    p, qT, q0 = args
    market = CompressionMarket(len(p), q0=q0)
    expected = oracles.entropy(p) + oracles.kl(p, market.q0)
    assert abs(total_expected_cost(market, qT, p) - expected) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(prob(3), prob(3), st.floats(0.1, 3.0))
def test_cost_splits_into_encoding_and_mechanism(p, qT, alpha):
    market = CompressionMarket(3, alpha=alpha)
    total = encoding_cost(qT, p) + mechanism_cost(market, qT, p)
    assert total == pytest.approx(total_expected_cost(market, qT, p), abs=1e-12)


def test_total_expected_cost_at_initial_estimate():
    p = [0.1, 0.6, 0.3]
    q0 = [0.2, 0.2, 0.6]
    expected = oracles.entropy(p) + oracles.kl(p, q0)
    for alpha in (0.3, 1.0, 2.5):
        market = CompressionMarket(3, q0=q0, alpha=alpha)
        assert total_expected_cost(market, q0, p) == pytest.approx(expected, abs=1e-12)


def test_total_expected_cost_support_mismatch():
    with pytest.raises(DomainError):
        total_expected_cost(CompressionMarket(2, alpha=0.5), [1.0, 0.0], [0.5, 0.5])


# --- regression --------------------------------------------------------------------


def test_regression_examples():
    spec = regression_clm(RegressionMarket(1))
    X = Batch([[1.0]], [1.0])
    assert spec.loss([0.0], X) == pytest.approx(0.5)
    assert spec.loss([1.0], X) == 0.0
    assert spec.cost([0.0], [1.0]) == 2.0
    assert spec.profit([0.0], [1.0], X) == pytest.approx(0.5)
    assert spec.cost([0.4], [0.4]) == 0.0 and spec.profit([0.4], [0.4], X) == 0.0
    assert worst_case_loss(regression_clm(RegressionMarket(1, alpha=2.0))) == pytest.approx(1.0, abs=1e-3)


def test_load_batch(tmp_path):
    path = tmp_path / "b.csv"
    path.write_text("x1,x2,y\n0.6,0.8,1\n\n0.0,0.5,-0.3\n")
    batch = load_batch(path, d=2)
    assert batch.x.shape == (2, 2) and np.allclose(batch.y, [1.0, -0.3])


@pytest.mark.parametrize("text, rows", [
    ("x,y\n0.5,0.5\n2.0,0.1\n", [2]),
    ("x,y\n0.5,abc\n\n0.5,0.5,0.1\n", [1, 3]),
    ("x,y\nnan,0\n0.1,1.5\n", [1, 2]),
])
def test_load_batch_rejects_rows(tmp_path, text, rows):
    path = tmp_path / "b.csv"
    path.write_text(text)
    with pytest.raises(BatchError) as info:
        load_batch(path)
    assert info.value.rows == rows


def test_load_batch_needs_header(tmp_path):
    path = tmp_path / "b.csv"
    path.write_text("0.5,0.5\n")
    with pytest.raises(BatchError):
        load_batch(path)
    with pytest.raises(BatchError):
        load_batch(tmp_path / "missing.csv")


# --- label betting ------------------------------------------------------------------


def test_label_examples():
    market = LabelMarket(1, (0, 1), w0=[0.0])
    spec = label_clm(market)
    assert spec.cost([0.0], [1.0]) == 2.0
    assert spec.profit([0.0], [1.0], np.array([1.0])) == pytest.approx(1.0)
    assert spec.payout([0.0], [1.0], np.array([1.0])) == pytest.approx(3.0)
    two = label_clm(LabelMarket(2, (0, 1)))
    assert two.loss([0.5, 0.5], np.array([0.0, 1.0])) == pytest.approx(0.5)
    assert two.loss([0.0, 1.0], np.array([0.0, 1.0])) == 0.0


def test_label_market_validation():
    with pytest.raises(DomainError):
        LabelMarket(2, (1, 1))
    with pytest.raises(ScheduleError):
        LabelMarket(3, schedule=[[0, 1], [1, 2]])
    assert np.array_equal(LabelMarket(2, (1, 5)).w0, [3.0, 3.0])


def _label_ledger(market, rng, T):
    spec = label_clm(market)
    led = open_ledger(spec)
    for t in range(T):
        post_bid(led, spec, f"p{t % 3}", spec.hypothesis_space.sample(rng, 1)[0])
    return spec, led


def test_mini_payout_all_indices_matches_settle():
    rng = np.random.default_rng(1)
    y = np.array([1.5, 4.0, 2.2])
    market = LabelMarket(3)
    spec, led = _label_ledger(market, rng, 8)
    one_shot = settle(copy.deepcopy(led), spec, y)
    mini = mini_payout(market, led, spec, [0, 1, 2], y)
    for name in one_shot:
        assert mini[name] == pytest.approx(one_shot[name], abs=1e-9)
    assert led.status == "settled"
    with pytest.raises(LedgerStateError):
        mini_payout(market, led, spec, [], [])


def test_mini_payout_empty_set():
    market = LabelMarket(2)
    spec, led = _label_ledger(market, np.random.default_rng(2), 4)
    assert mini_payout(market, led, spec, [], []) == {}
    assert market.frozen == set() and led.status == "open"


def test_mini_payout_two_intervals():
    rng = np.random.default_rng(3)
    y = np.array([2.0, 4.5])
    market = LabelMarket(2)
    spec, led = _label_ledger(market, rng, 5)
    one_shot = settle(copy.deepcopy(led), spec, y)
    first = mini_payout(market, led, spec, [1], y[[1]])
    with pytest.raises(ScheduleError):
        mini_payout(market, led, spec, [1], y[[1]])
    second = mini_payout(market, led, spec, [0], y[[0]])
    for name in one_shot:
        assert first.get(name, 0) + second.get(name, 0) == pytest.approx(one_shot[name], abs=1e-9)


def test_frozen_labels_reject_bids():
    market = LabelMarket(2)
    spec, led = _label_ledger(market, np.random.default_rng(4), 2)
    mini_payout(market, led, spec, [0], [3.0])
    w = led.current
    with pytest.raises(RejectedBid):
        post_bid(led, spec, "x", [w[0] + 0.5, w[1]])
    post_bid(led, spec, "x", [w[0], 1.0])
    assert spec.adjust_bid(w, np.array([5.0, 2.0]))[0] == w[0]


def test_mini_payout_rejects_bad_indices():
    market = LabelMarket(2)
    spec, led = _label_ledger(market, np.random.default_rng(5), 2)
    for S, y in (([2], [1.0]), ([0, 0], [1.0, 1.0]), ([0], [1.0, 2.0])):
        with pytest.raises(ScheduleError):
            mini_payout(market, led, spec, S, y)
    with pytest.raises(DomainError):
        mini_payout(market, led, spec, [0], [9.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mini_payout_decomposition(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 5))
    market = LabelMarket(m)
    spec, led = _label_ledger(market, rng, int(rng.integers(0, 12)))
    y = rng.uniform(1, 5, m)
    one_shot = settle(copy.deepcopy(led), spec, y)
    blocks = np.array_split(rng.permutation(m), int(rng.integers(1, m + 1)))
    totals = {}
    for block in blocks:
        S = [int(k) for k in block]
        for name, v in mini_payout(market, led, spec, S, y[S]).items():
            totals[name] = totals.get(name, 0.0) + v
    for name in one_shot:
        assert totals.get(name, 0.0) == pytest.approx(one_shot[name], abs=1e-9)


# --- header registry ----------------------------------------------------------------


@pytest.mark.parametrize("spec", [
    compression_clm(CompressionMarket(3, alpha=0.5)),
    regression_clm(RegressionMarket(2, alpha=2.0)),
    label_clm(LabelMarket(2, (0, 3))),
])
def test_spec_from_header_round_trip(spec):
    back = spec_from_header(spec.header())
    assert back.header() == spec.header()


def test_spec_from_header_errors():
    with pytest.raises(ConfigError):
        spec_from_header({"market_kind": "nope"})
    with pytest.raises(ConfigError):
        spec_from_header({"market_kind": "compression", "parameters": {}})
    header = compression_clm(CompressionMarket(2)).header()
    header["w0"] = [0.3, 0.7]
    back = spec_from_header(header)
    assert np.allclose(back.initial_hypothesis, [0.3, 0.7])
