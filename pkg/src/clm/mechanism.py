"""The bid/settle protocol: specs, the trade ledger, settlement and accounting.

A :class:`ClmSpec` bundles a hypothesis space with ``Cost`` and ``Payout``
functions. Everything scales linearly with ``alpha``: the spec stores the
unscaled loss and cost so rescaling to a budget is a one-field change.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np

from .convex import FeasibleSet, as_point
from .errors import (
    ConstructionError,
    DomainError,
    InvariantError,
    LedgerStateError,
    RejectedBid,
    RescaleError,
    VoucherError,
)
from .scoring import Belief, Gsr, OutcomeSpace

ESCROW_SLACK = 1e-12


# ---------------------------------------------------------------------------
# Cost rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Lipschitz:
    """``Cost(w, w') = constant * ||w - w'||_2`` for the unscaled loss."""

    constant: float


@dataclass(frozen=True)
class WorstCaseGap:
    """``Cost(w, w') = max_X L(w'; X) - L(w; X)`` over audit outcomes, floored at 0."""

    n_random: int = 16


CostRule = Union[Lipschitz, WorstCaseGap, Callable[[np.ndarray, np.ndarray], float]]


# ---------------------------------------------------------------------------
# Spec
# ---------------------------------------------------------------------------


@dataclass
class ClmSpec:
    hypothesis_space: FeasibleSet
    outcomes: OutcomeSpace
    base_cost: Callable[[np.ndarray, np.ndarray], float]
    initial_hypothesis: np.ndarray
    alpha: float = 1.0
    gsr: Optional[Gsr] = None
    base_payout: Optional[Callable] = None
    market_kind: str = "custom"
    parameters: Dict[str, Any] = field(default_factory=dict)
    cost_rule: Any = None
    bid_guard: Optional[Callable[[np.ndarray, np.ndarray], None]] = None
    budget_set: Optional[Callable[["ClmSpec", np.ndarray, float], FeasibleSet]] = None
    adjust_bid: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError("alpha must be positive")
        self.initial_hypothesis = as_point(self.initial_hypothesis, self.hypothesis_space.dim)

    @property
    def dim(self) -> int:
        return self.hypothesis_space.dim

    def with_alpha(self, alpha: float) -> "ClmSpec":
        return replace(self, alpha=float(alpha))

    def budget_region(self, w, B: float) -> FeasibleSet:
        """Hypotheses reachable from ``w`` for at most ``B``."""
        if self.budget_set is None:
            raise DomainError(f"{self.market_kind} spec has no budget region")
        return self.budget_set(self, np.asarray(w, dtype=float), B)

    def cost(self, w, w_new) -> float:
        return self.alpha * float(self.base_cost(np.asarray(w, float), np.asarray(w_new, float)))

    def loss(self, W, X):
        """Scaled loss; ``X`` may be a :class:`Belief` (expected loss)."""
        if self.gsr is None:
            raise DomainError("spec carries no loss")
        if isinstance(X, Belief):
            return sum(p * self.loss(W, x) for x, p in X if p)
        return self.alpha * self.gsr.loss(W, X)

    def payout(self, w, w_new, X) -> float:
        if isinstance(X, Belief):
            return float(sum(p * self.payout(w, w_new, x) for x, p in X if p))
        w = np.asarray(w, dtype=float)
        w_new = np.asarray(w_new, dtype=float)
        if self.base_payout is not None:
            return self.alpha * float(self.base_payout(w, w_new, X))
        gap = float(self.gsr.loss(w, X)) - float(self.gsr.loss(w_new, X))
        return self.alpha * (gap + float(self.base_cost(w, w_new)))

    def profit(self, w, w_new, X) -> float:
        return self.payout(w, w_new, X) - self.cost(w, w_new)

    def payouts_stacked(self, W_from, W_to, costs, X) -> np.ndarray:
        """Payout for many bids against one outcome, given their costs."""
        W_from = np.asarray(W_from, dtype=float)
        W_to = np.asarray(W_to, dtype=float)
        if self.base_payout is not None:
            return np.array([self.payout(a, b, X) for a, b in zip(W_from, W_to)])
        gap = self.gsr.loss(W_from, X) - self.gsr.loss(W_to, X)
        return self.alpha * gap + np.asarray(costs, dtype=float)

    def header(self, seed: int = 0) -> dict:
        return {
            "market_kind": self.market_kind,
            "parameters": self.parameters,
            "w0": [float(v) for v in self.initial_hypothesis],
            "alpha": float(self.alpha),
            "seed": int(seed),
        }


def spec_digest(header: dict) -> str:
    body = {k: header[k] for k in ("market_kind", "parameters", "w0", "alpha", "seed")}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


def _audit_pairs(H: FeasibleSet, rng: np.random.Generator, n_bids: int) -> list:
    pts = list(H.sample(rng, n_bids))
    pts.extend(H.extreme_points())
    pairs = [(a, b) for a, b in zip(pts[:-1], pts[1:])]
    pairs.append((pts[0], pts[0]))
    return pairs


def _stacked_loss(L: Gsr, W: np.ndarray, X) -> np.ndarray:
    """``L(w; X)`` for every row of ``W``, row by row if ``L`` does not vectorize."""
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.asarray(L.loss(W, X), dtype=float)
        if out.shape == (len(W),):
            return out
    except (ValueError, IndexError, TypeError, DomainError):
        pass
    return np.array([float(L.loss(w, X)) for w in W])


def escrow_audit(spec: ClmSpec, seed: int = 0, n_bids: int = 200) -> None:
    """Raise :class:`ConstructionError` on any sampled negative payout."""
    rng = np.random.default_rng(seed)
    outcomes = spec.outcomes.audit(seed)
    pairs = _audit_pairs(spec.hypothesis_space, rng, n_bids)
    costs = np.array([spec.cost(w, w_new) for w, w_new in pairs])
    keep = np.isfinite(costs)
    if not keep.any():
        return
    W = np.array([w for w, _ in pairs])[keep]
    W_new = np.array([w for _, w in pairs])[keep]
    costs = costs[keep]
    for X in outcomes:
        if spec.base_payout is not None or spec.gsr is None:
            pays = np.array([spec.payout(a, b, X) for a, b in zip(W, W_new)])
        else:
            gap = _stacked_loss(spec.gsr, W, X) - _stacked_loss(spec.gsr, W_new, X)
            pays = spec.alpha * gap + costs
        bad = np.flatnonzero(~(pays >= -ESCROW_SLACK))
        if bad.size:
            k = bad[0]
            raise ConstructionError(
                f"escrow violated: payout {pays[k]:.3g} < 0", witness=(W[k], W_new[k], X)
            )


def make_l_clm(
    L: Gsr,
    cost_rule: CostRule,
    w0,
    alpha: float = 1.0,
    *,
    audit_seed: int = 0,
    n_audit_bids: int = 200,
    market_kind: str = "custom",
    parameters: Optional[dict] = None,
) -> ClmSpec:
    """Build the spec whose profit is exactly ``alpha * (L(w) - L(w'))``.

    ``Lipschitz(c)`` takes the Lipschitz constant of the *unscaled* loss;
    ``alpha`` multiplies loss and cost together.

    Raises:
        ConstructionError: a sampled bid has negative payout (with witness),
            or the Lipschitz constant is contradicted by a sample.
    """
    H = L.hypothesis_space
    w0 = as_point(w0, H.dim)
    if not H.contains(w0):
        raise DomainError("initial hypothesis is outside the hypothesis space")
    if isinstance(cost_rule, Lipschitz):
        lam = float(cost_rule.constant)

        def base_cost(w, w_new):
            return lam * float(np.linalg.norm(w_new - w))

    elif isinstance(cost_rule, WorstCaseGap):
        audit = L.outcomes.audit(audit_seed, cost_rule.n_random)

        def base_cost(w, w_new):
            gaps = [float(L.loss(w_new, X)) - float(L.loss(w, X)) for X in audit]
            return max(0.0, max(gaps))

    elif callable(cost_rule):
        base_cost = cost_rule
    else:
        raise ConstructionError(f"unknown cost rule {cost_rule!r}")

    spec = ClmSpec(
        hypothesis_space=H,
        outcomes=L.outcomes,
        base_cost=base_cost,
        initial_hypothesis=w0,
        alpha=alpha,
        gsr=L,
        market_kind=market_kind,
        parameters=dict(parameters or {}),
        cost_rule=cost_rule,
    )
    if isinstance(cost_rule, Lipschitz):
        spec.budget_set = lipschitz_budget_set
        _audit_lipschitz(L, lam, audit_seed, n_audit_bids)
    escrow_audit(spec, audit_seed, n_audit_bids)
    return spec


def lipschitz_budget_set(spec: ClmSpec, w, B: float) -> FeasibleSet:
    """Hypotheses reachable from ``w`` with cost at most ``B``."""
    lam = spec.cost_rule.constant * spec.alpha
    radius = np.inf if not np.isfinite(B) else max(B, 0.0) / lam
    if not np.isfinite(radius):
        return spec.hypothesis_space
    return FeasibleSet.intersection(spec.hypothesis_space, FeasibleSet.l2_ball(spec.dim, radius, center=w))


def _audit_lipschitz(L: Gsr, lam: float, seed: int, n_bids: int) -> None:
    rng = np.random.default_rng(seed + 1)
    outcomes = L.outcomes.audit(seed)
    pairs = _audit_pairs(L.hypothesis_space, rng, n_bids)
    W = np.array([w for w, _ in pairs])
    W_new = np.array([w for _, w in pairs])
    bound = lam * np.linalg.norm(W_new - W, axis=1) + ESCROW_SLACK
    for X in outcomes:
        gap = np.abs(_stacked_loss(L, W, X) - _stacked_loss(L, W_new, X))
        bad = np.flatnonzero(gap > bound)
        if bad.size:
            k = bad[0]
            raise ConstructionError(
                f"loss changes by {gap[k]:.3g} but the Lipschitz bound allows {bound[k]:.3g}",
                witness=(W[k], W_new[k], X),
            )


# ---------------------------------------------------------------------------
# Vouchers and accounts
# ---------------------------------------------------------------------------


@dataclass
class VoucherPool:
    """Up to ``count_m`` one-time vouchers of ``amount_c`` each."""

    count_m: int
    amount_c: float
    issued: Dict[str, float] = field(default_factory=dict)
    drawn: float = 0.0

    def __post_init__(self):
        if self.count_m < 0 or self.amount_c < 0:
            raise VoucherError("voucher count and amount must be non-negative")

    @property
    def liability(self) -> float:
        return len(self.issued) * self.amount_c

    @property
    def operational_cost(self) -> float:
        """Amount added to the mechanism's operating cost by issued vouchers."""
        return self.liability

    def remaining(self, participant: str) -> float:
        return self.issued.get(participant, 0.0)

    def draw(self, participant: str, amount: float) -> float:
        take = min(self.remaining(participant), max(amount, 0.0))
        if take:
            self.issued[participant] -= take
            self.drawn += take
        return take


def issue_voucher(pool: VoucherPool, participant: str) -> VoucherPool:
    if participant in pool.issued:
        raise VoucherError(f"{participant!r} already holds a voucher")
    if len(pool.issued) >= pool.count_m:
        raise VoucherError("voucher pool exhausted")
    pool.issued[participant] = pool.amount_c
    return pool


class Accounts:
    """Cash balances plus an optional voucher pool; vouchers are spent first."""

    def __init__(self, cash: Optional[Dict[str, float]] = None, vouchers: Optional[VoucherPool] = None):
        self.cash = dict(cash or {})
        self.vouchers = vouchers

    def balance(self, participant: str) -> float:
        v = self.vouchers.remaining(participant) if self.vouchers else 0.0
        return self.cash.get(participant, 0.0) + v

    def debit(self, participant: str, amount: float) -> None:
        if amount > 0 and self.vouchers is not None:
            amount -= self.vouchers.draw(participant, amount)
        self.cash[participant] = self.cash.get(participant, 0.0) - amount

    def credit(self, participant: str, amount: float) -> None:
        self.cash[participant] = self.cash.get(participant, 0.0) + amount


# ---------------------------------------------------------------------------
# Ledger
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TradeRecord:
    seq: int
    participant: str
    from_hypothesis: tuple
    to_hypothesis: tuple
    cost: float
    timestamp: int

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "participant": self.participant,
            "from": list(self.from_hypothesis),
            "to": list(self.to_hypothesis),
            "cost": self.cost,
        }


@dataclass
class Settlement:
    outcome: Any
    payouts: Dict[str, float]
    record_payouts: List[float]


@dataclass
class Ledger:
    header: dict
    spec_digest: str
    records: List[TradeRecord] = field(default_factory=list)
    status: str = "open"
    settlement: Optional[Settlement] = None

    @property
    def w0(self) -> np.ndarray:
        return np.asarray(self.header["w0"], dtype=float)

    @property
    def current(self) -> np.ndarray:
        if self.records:
            return np.asarray(self.records[-1].to_hypothesis, dtype=float)
        return self.w0

    def costs_by_participant(self) -> Dict[str, float]:
        out: Dict[str, float] = {}
        for r in self.records:
            out[r.participant] = out.get(r.participant, 0.0) + r.cost
        return out


def open_ledger(spec: ClmSpec, seed: int = 0) -> Ledger:
    header = spec.header(seed)
    return Ledger(header=header, spec_digest=spec_digest(header))


def post_bid(ledger: Ledger, spec: ClmSpec, participant: str, w_new, accounts: Optional[Accounts] = None):
    """Charge ``Cost(w_t, w_new)``, append the record and publish ``w_new``.

    Returns ``(ledger, cost)``. Rejected bids leave the ledger and the
    accounts untouched.

    Raises:
        LedgerStateError: the ledger is settled.
        RejectedBid: ``w_new`` outside the hypothesis space, infinite cost,
            a guard refusal, or insufficient funds.
    """
    if ledger.status != "open":
        raise LedgerStateError("ledger is settled")
    w_new = as_point(w_new, spec.dim)
    if w_new.ndim != 1 or not spec.hypothesis_space.contains(w_new):
        raise RejectedBid("bid lies outside the hypothesis space")
    w = ledger.current
    if spec.bid_guard is not None:
        spec.bid_guard(w, w_new)
    with np.errstate(divide="ignore", invalid="ignore"):
        cost = spec.cost(w, w_new)
    if not np.isfinite(cost):
        raise RejectedBid("bid has infinite cost")
    if accounts is not None:
        if accounts.balance(participant) < cost - ESCROW_SLACK:
            raise RejectedBid(f"{participant!r} cannot cover cost {cost:.6g}")
        accounts.debit(participant, cost)
    seq = len(ledger.records)
    ledger.records.append(
        TradeRecord(
            seq=seq,
            participant=str(participant),
            from_hypothesis=tuple(float(v) for v in w),
            to_hypothesis=tuple(float(v) for v in w_new),
            cost=cost,
            timestamp=seq,
        )
    )
    return ledger, cost


def record_payouts(ledger: Ledger, spec: ClmSpec, X) -> List[float]:
    return [spec.payout(r.from_hypothesis, r.to_hypothesis, X) for r in ledger.records]


def settle(ledger: Ledger, spec: ClmSpec, X, accounts: Optional[Accounts] = None) -> Dict[str, float]:
    """Pay every record ``Payout(w_t, w_{t+1}; X)`` and close the ledger.

    ``X`` may be a :class:`Belief`, in which case each record is paid its
    expected payout (used for empirical-distribution settlement).
    """
    if ledger.status != "open":
        raise LedgerStateError("ledger is already settled")
    pays = record_payouts(ledger, spec, X)
    totals: Dict[str, float] = {}
    for r, p in zip(ledger.records, pays):
        if p < -ESCROW_SLACK:
            raise InvariantError(f"record {r.seq} pays {p:.3g} < 0", witness=(r, X))
        totals[r.participant] = totals.get(r.participant, 0.0) + p
    if accounts is not None:
        for name, amount in totals.items():
            accounts.credit(name, amount)
    ledger.status = "settled"
    ledger.settlement = Settlement(outcome=X, payouts=totals, record_payouts=pays)
    return totals


def mechanism_loss(spec: ClmSpec, ledger: Ledger, X) -> float:
    """``L(w_0; X) - L(w_T; X)``: what the mechanism pays net of costs."""
    return float(spec.loss(ledger.w0, X)) - float(spec.loss(ledger.current, X))


def telescoping_residual(spec: ClmSpec, ledger: Ledger, X) -> float:
    total = sum(spec.profit(r.from_hypothesis, r.to_hypothesis, X) for r in ledger.records)
    return abs(total - mechanism_loss(spec, ledger, X))


def worst_case_loss(spec: ClmSpec, step: float = 1e-2, seed: int = 0) -> float:
    """Audit value of ``max_{w, X} L(w_0; X) - L(w; X)``.

    A lower bound on the true value; exact when outcomes are enumerable and
    the maximizing hypothesis lies on the audit grid.
    """
    grid = spec.hypothesis_space.grid(step, seed=seed)
    w0 = spec.initial_hypothesis
    best = -np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        for X in spec.outcomes.audit(seed):
            vals = spec.loss(grid, X)
            best = max(best, float(spec.loss(w0, X)) - float(np.nanmin(vals)))
    return max(best, 0.0)


def rescale_to_budget(spec: ClmSpec, B: float, step: float = 1e-2) -> ClmSpec:
    """Return a copy whose audit worst-case loss equals ``B``."""
    wcl = worst_case_loss(spec, step)
    if not np.isfinite(wcl) or wcl <= 0:
        raise RescaleError(f"worst-case loss {wcl!r} cannot be rescaled")
    return spec.with_alpha(spec.alpha * B / wcl)
