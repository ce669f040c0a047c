"""Ready-to-run markets: stream compression, l2 regression and label betting."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set

import numpy as np
from scipy.special import rel_entr

from .apmm import lmsr_market, quadratic_market
from .convex import FeasibleSet, as_point
from .errors import BatchError, ConfigError, ConstructionError, DomainError, LedgerStateError, RejectedBid, ScheduleError
from .mechanism import ClmSpec, Ledger, Lipschitz, Settlement, make_l_clm, settle
from .scoring import Batch, Belief, compression_gsr, label_gsr, regression_gsr
from .streams import stream

COMPRESSION_FLOOR = 1e-9


# ---------------------------------------------------------------------------
# Compression
# ---------------------------------------------------------------------------


@dataclass
class CompressionMarket:
    """Crowdsourced code lengths for a stream over an ``n``-letter alphabet."""

    n: int
    q0: Optional[Sequence[float]] = None
    alpha: float = 1.0
    stream: Sequence[int] = ()
    sample_seed: int = 0
    floor: float = COMPRESSION_FLOOR

    def __post_init__(self):
        q0 = np.full(self.n, 1.0 / self.n) if self.q0 is None else as_point(self.q0, self.n)
        if np.any(q0 <= 0) or abs(q0.sum() - 1.0) > 1e-12:
            raise DomainError("q0 must be a strictly positive distribution")
        self.q0 = q0
        self.stream = [int(i) for i in self.stream]
        if any(not 0 <= i < self.n for i in self.stream):
            raise DomainError(f"stream characters must lie in [0, {self.n})")

    def empirical(self) -> Belief:
        if not self.stream:
            raise DomainError("empty stream")
        return Belief.empirical(self.stream)


def compression_cost(q, q_new) -> float:
    """``max_i ln(q(i) / q'(i))``: the most any character's code can grow."""
    with np.errstate(divide="ignore"):
        return float(np.max(np.log(q) - np.log(q_new)))


def _compression_budget(spec: ClmSpec, q, B: float) -> FeasibleSet:
    floor = spec.parameters.get("floor", COMPRESSION_FLOOR)
    if not np.isfinite(B):
        return spec.hypothesis_space
    return FeasibleSet.simplex(spec.dim, np.maximum(floor, q * np.exp(-max(B, 0.0) / spec.alpha)))


def compression_clm(market: CompressionMarket) -> ClmSpec:
    """Spec paying ``alpha * (ln q'(i) - ln q(i) + Cost)`` for character ``i``.

    Payouts are non-negative because ``Cost`` dominates every log-ratio.
    """
    L = compression_gsr(market.n, market.floor)
    spec = make_l_clm(
        L,
        compression_cost,
        market.q0,
        market.alpha,
        market_kind="compression",
        parameters={"n": market.n, "floor": market.floor},
    )
    spec.budget_set = _compression_budget
    return spec


def settle_by_sample(market: CompressionMarket, ledger: Ledger, seed: Optional[int] = None, spec=None):
    """Settle against one character drawn uniformly from the stream."""
    spec = spec or compression_clm(market)
    rng = stream(market.sample_seed if seed is None else seed, "settlement")
    i = market.stream[int(rng.integers(len(market.stream)))]
    return settle(ledger, spec, i)


def settle_by_empirical(market: CompressionMarket, ledger: Ledger, spec=None):
    """Settle every record at its average payout over the stream."""
    spec = spec or compression_clm(market)
    return settle(ledger, spec, market.empirical())


def _entropy_terms(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any((p > 0) & (q <= 0)):
        raise DomainError("distribution is zero where the belief has mass")
    return float(np.sum(rel_entr(p, q)))


def _belief_vector(p, n: int) -> np.ndarray:
    return p.probabilities(n) if isinstance(p, Belief) else as_point(p, n)


def entropy(p) -> float:
    p = np.asarray(p, dtype=float)
    return float(-np.sum(rel_entr(p, 1.0)))


def encoding_cost(qT, p) -> float:
    """Expected bits (nats) to encode ``p``-distributed characters with ``qT``."""
    p = np.asarray(p, dtype=float)
    return entropy(p) + _entropy_terms(p, qT)


def mechanism_cost(market: CompressionMarket, qT, p) -> float:
    """Expected net payment ``alpha (KL(p; q0) - KL(p; qT))``."""
    p = np.asarray(p, dtype=float)
    return market.alpha * (_entropy_terms(p, market.q0) - _entropy_terms(p, qT))


def total_expected_cost(market: CompressionMarket, qT, p) -> float:
    """``H(p) + (1 - alpha) KL(p; qT) + alpha KL(p; q0)``.

    At ``alpha = 1`` the final estimate drops out entirely.
    """
    p = _belief_vector(p, market.n)
    qT = as_point(qT, market.n)
    a = market.alpha
    return entropy(p) + (1 - a) * _entropy_terms(p, qT) + a * _entropy_terms(p, market.q0)


# ---------------------------------------------------------------------------
# Regression
# ---------------------------------------------------------------------------


@dataclass
class RegressionMarket:
    """Linear predictors on the unit ball scored by half mean squared error."""

    d: int
    alpha: float = 1.0
    test_batch: Optional[Batch] = None
    batch_size: int = 1

    def __post_init__(self):
        if self.test_batch is not None:
            self.batch_size = len(self.test_batch)


def regression_clm(market: RegressionMarket) -> ClmSpec:
    """Lipschitz-cost spec with ``Cost = 2 alpha ||w - w'||``.

    Raises:
        ConstructionError: the test batch has ``||x|| > 1`` or ``|y| > 1``.
    """
    L = regression_gsr(market.d, market.batch_size)
    if market.test_batch is not None:
        try:
            L.outcomes.validate(market.test_batch)
        except DomainError as exc:
            raise ConstructionError(str(exc), witness=market.test_batch) from exc
    return make_l_clm(
        L,
        Lipschitz(2.0),
        np.zeros(market.d),
        market.alpha,
        market_kind="regression",
        parameters={"d": market.d, "batch_size": market.batch_size},
    )


def load_batch(path, d: Optional[int] = None) -> Batch:
    """Read ``x_1..x_d, y`` rows from a CSV file with a header row.

    Raises:
        BatchError: malformed or out-of-bounds rows, listed by 1-based data
            row number.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise BatchError(f"{path}: {exc.strerror}") from exc
    if not rows:
        raise BatchError(f"{path}: missing header row")
    header, body = rows[0], rows[1:]
    try:
        [float(v) for v in header]
    except ValueError:
        pass
    else:
        raise BatchError(f"{path}: first row is numeric; a header row is required")
    width = len(header)
    if d is not None and width != d + 1:
        raise BatchError(f"{path}: expected {d + 1} columns, header has {width}")
    xs, ys, bad = [], [], []
    for k, row in enumerate(body, start=1):
        if not row:
            continue
        try:
            vals = [float(v) for v in row]
        except ValueError:
            bad.append(k)
            continue
        if len(vals) != width or not np.all(np.isfinite(vals)):
            bad.append(k)
            continue
        x, y = np.asarray(vals[:-1]), vals[-1]
        if np.linalg.norm(x) > 1 + 1e-12 or abs(y) > 1 + 1e-12:
            bad.append(k)
            continue
        xs.append(x)
        ys.append(y)
    if bad:
        raise BatchError(f"{path}: rejected rows {bad}", rows=bad)
    if not xs:
        raise BatchError(f"{path}: no data rows")
    return Batch(np.array(xs), np.array(ys))


# ---------------------------------------------------------------------------
# Label betting
# ---------------------------------------------------------------------------


@dataclass
class LabelMarket:
    """Direct bets on ``m`` labels in ``K``, settled interval by interval."""

    m: int
    K: tuple = (1.0, 5.0)
    alpha: float = 1.0
    w0: Optional[Sequence[float]] = None
    schedule: List[List[int]] = field(default_factory=list)
    frozen: Set[int] = field(default_factory=set)
    paid: Dict[str, float] = field(default_factory=dict)
    record_paid: List[float] = field(default_factory=list)
    revealed: Optional[np.ndarray] = None

    def __post_init__(self):
        lo, hi = float(self.K[0]), float(self.K[1])
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise DomainError("label interval must be bounded and non-degenerate")
        self.K = (lo, hi)
        self.w0 = np.full(self.m, 0.5 * (lo + hi)) if self.w0 is None else as_point(self.w0, self.m)
        seen: Set[int] = set()
        for block in self.schedule:
            if seen & set(block) or any(not 0 <= k < self.m for k in block):
                raise ScheduleError("schedule blocks must be disjoint index sets in [0, m)")
            seen |= set(block)

    @property
    def width(self) -> float:
        return self.K[1] - self.K[0]

    def guard(self, w, w_new) -> None:
        moved = [k for k in self.frozen if w_new[k] != w[k]]
        if moved:
            raise RejectedBid(f"labels {sorted(moved)} are frozen")

    def keep_frozen(self, w, w_new) -> np.ndarray:
        out = np.array(w_new, dtype=float)
        idx = sorted(self.frozen)
        out[idx] = np.asarray(w, dtype=float)[idx]
        return out


def label_clm(market: LabelMarket) -> ClmSpec:
    """Total-squared-error spec with Lipschitz constant ``2 m width(K)``."""
    L = label_gsr(market.m, market.K)
    spec = make_l_clm(
        L,
        Lipschitz(2.0 * market.m * market.width),
        market.w0,
        market.alpha,
        market_kind="label",
        parameters={"m": market.m, "K": list(market.K)},
    )
    spec.bid_guard = market.guard
    spec.adjust_bid = market.keep_frozen
    return spec


def coordinate_payouts(spec: ClmSpec, record, y) -> np.ndarray:
    """Per-label split of one record's payout.

    The charged cost is allocated in proportion to ``|w'_k - w_k|``; the
    entries sum to the record's full payout.
    """
    w = np.asarray(record.from_hypothesis, dtype=float)
    w_new = np.asarray(record.to_hypothesis, dtype=float)
    y = np.asarray(y, dtype=float)
    step = np.abs(w_new - w)
    total = step.sum()
    share = record.cost * step / total if total > 0 else np.zeros_like(w)
    return share + spec.alpha * ((w - y) ** 2 - (w_new - y) ** 2)


def mini_payout(market: LabelMarket, ledger: Ledger, spec: ClmSpec, S: Sequence[int], y_S) -> Dict[str, float]:
    """Pay every record its share on labels ``S`` and freeze them.

    Once every label is frozen the ledger is marked settled with the
    cumulative payouts.

    Raises:
        ScheduleError: ``S`` overlaps frozen labels or is out of range.
        LedgerStateError: the ledger is already settled.
    """
    if ledger.status != "open":
        raise LedgerStateError("ledger is already settled")
    S = [int(k) for k in S]
    y_S = np.asarray(y_S, dtype=float).reshape(-1)
    if len(set(S)) != len(S) or any(not 0 <= k < market.m for k in S):
        raise ScheduleError("mini-payout indices must be distinct labels in [0, m)")
    if market.frozen & set(S):
        raise ScheduleError(f"labels {sorted(market.frozen & set(S))} are already paid")
    if y_S.shape[0] != len(S):
        raise ScheduleError("one revealed label per index")
    lo, hi = market.K
    if np.any(y_S < lo) or np.any(y_S > hi):
        raise DomainError(f"revealed labels must lie in {market.K}")
    out: Dict[str, float] = {}
    if not S:
        return out
    y = np.zeros(market.m)
    y[S] = y_S
    if market.revealed is None:
        market.revealed = np.full(market.m, np.nan)
    market.revealed[S] = y_S
    market.record_paid += [0.0] * (len(ledger.records) - len(market.record_paid))
    for i, rec in enumerate(ledger.records):
        p = float(coordinate_payouts(spec, rec, y)[S].sum())
        market.record_paid[i] += p
        out[rec.participant] = out.get(rec.participant, 0.0) + p
    for name, v in out.items():
        market.paid[name] = market.paid.get(name, 0.0) + v
    market.frozen |= set(S)
    if len(market.frozen) == market.m:
        ledger.status = "settled"
        ledger.settlement = Settlement(
            outcome=market.revealed.copy(), payouts=dict(market.paid), record_payouts=list(market.record_paid)
        )
    return out


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


def spec_from_header(header: dict) -> ClmSpec:
    """Rebuild the spec recorded in a ledger header."""
    kind = header.get("market_kind")
    p = header.get("parameters", {})
    alpha = float(header.get("alpha", 1.0))
    w0 = header.get("w0")
    try:
        if kind == "compression":
            spec = compression_clm(CompressionMarket(p["n"], q0=w0, alpha=alpha, floor=p.get("floor", COMPRESSION_FLOOR)))
        elif kind == "regression":
            spec = regression_clm(RegressionMarket(p["d"], alpha=alpha, batch_size=p.get("batch_size", 1)))
        elif kind == "label":
            spec = label_clm(LabelMarket(p["m"], tuple(p["K"]), alpha=alpha, w0=w0))
        elif kind == "lmsr":
            spec = lmsr_market(p["n"], p.get("eta", 1.0)).clm_spec(w0)
        elif kind == "quadratic":
            spec = quadratic_market(p["n"], interval=tuple(p.get("interval", (-1.0, 1.0)))).clm_spec(w0)
        else:
            raise ConfigError(f"unknown market kind {kind!r}")
    except KeyError as exc:
        raise ConfigError(f"market parameters missing {exc}") from exc
    if w0 is not None and not np.array_equal(spec.initial_hypothesis, np.asarray(w0, dtype=float)):
        raise ConfigError("initial hypothesis does not match the market")
    return spec
