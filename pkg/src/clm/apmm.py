"""Cost-function market makers and their duality with divergence-based rules.

An :class:`Apmm` sells share bundles ``r`` at price ``C(s + r) - C(s)`` and
pays ``rho(X) . r`` once the outcome ``X`` is known. Seen as a CLM its
hypotheses are share vectors; seen through prices ``grad C(s)`` it is the
divergence-based rule with potential ``C*``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from .convex import (
    ConvexPotential,
    FeasibleSet,
    HalfSquaredNorm,
    LogSumExp,
    SolverOptions,
    as_point,
    minimize,
)
from .errors import ConstructionError, DomainError, NonConvergenceError
from .mechanism import ClmSpec, Ledger, TradeRecord, post_bid
from .scoring import Belief, DivergenceGsr, Gsr, OutcomeSpace, divergence_gsr

AUDIT_TOL = 1e-8
STALL_TOL = 1e-6


class Apmm:
    """Share space ``R^n``, payoff map ``rho`` and convex cost ``C``.

    ``quantity`` is the outstanding share vector and is the only mutable
    state; quotes never touch it.
    """

    def __init__(
        self,
        C: ConvexPotential,
        rho: Callable,
        outcomes: OutcomeSpace,
        quantity=None,
        *,
        market_kind: str = "apmm",
        parameters: Optional[dict] = None,
    ):
        self.C = C
        self.rho = rho
        self.outcomes = outcomes
        self.quantity = np.zeros(C.dim) if quantity is None else as_point(quantity, C.dim).copy()
        self.market_kind = market_kind
        self.parameters = dict(parameters or {})
        self.trades = 0

    @property
    def n(self) -> int:
        return self.C.dim

    @property
    def buy_only(self) -> bool:
        """True when buying one of every share is a pure cash transfer.

        Bundles are then canonicalized to ``min(r) = 0``.
        """
        return isinstance(self.C, LogSumExp)

    def conjugate_potential(self) -> ConvexPotential:
        return self.C.dual()

    def payoff(self, X) -> np.ndarray:
        if isinstance(X, Belief):
            return sum(p * np.asarray(self.rho(x), dtype=float) for x, p in X)
        return np.asarray(self.rho(X), dtype=float)

    def clm_spec(self, w0=None) -> ClmSpec:
        """The market as a CLM over share vectors.

        Its loss ``C(s) - rho(X).s`` differs from the divergence form only
        by a per-outcome constant, and is finite for every share vector.
        """
        C = self.C
        L = Gsr(
            FeasibleSet.all_of(self.n),
            self.outcomes,
            lambda S, X: C.value(S) - np.asarray(S, dtype=float) @ np.asarray(self.rho(X), dtype=float),
            lambda s, X: C.gradient(s) - np.asarray(self.rho(X), dtype=float),
            name=f"{self.market_kind}_shares",
        )
        return ClmSpec(
            hypothesis_space=FeasibleSet.all_of(self.n),
            outcomes=self.outcomes,
            base_cost=lambda s, s_new: float(C.value(s_new) - C.value(s)),
            initial_hypothesis=self.quantity if w0 is None else w0,
            gsr=L,
            base_payout=lambda s, s_new, X: float(np.asarray(self.rho(X), dtype=float) @ (s_new - s)),
            market_kind=self.market_kind,
            parameters=self.parameters,
        )


def lmsr_market(n: int, eta: float = 1.0, quantity=None) -> Apmm:
    """Arrow-Debreu shares priced by the logarithmic market scoring rule."""
    eye = np.eye(n)
    return Apmm(
        LogSumExp(n, eta),
        lambda i: eye[i],
        OutcomeSpace.finite(n),
        quantity,
        market_kind="lmsr",
        parameters={"n": n, "eta": float(eta)},
    )


def quadratic_market(n: int, quantity=None, interval=(-1.0, 1.0)) -> Apmm:
    """Quadratic cost ``0.5 ||s||^2`` paying the outcome vector itself."""
    return Apmm(
        HalfSquaredNorm(n),
        lambda X: np.asarray(X, dtype=float),
        OutcomeSpace.label_vector(n, interval),
        quantity,
        market_kind="quadratic",
        parameters={"n": n, "interval": list(interval)},
    )


# ---------------------------------------------------------------------------
# Trading
# ---------------------------------------------------------------------------


@dataclass
class TradeResult:
    quantity: np.ndarray
    cost: float
    record: TradeRecord


def bundle_cost(A: Apmm, r) -> float:
    """Quote ``C(s + r) - C(s)`` without changing the market."""
    r = as_point(r, A.n)
    s = A.quantity
    return float(A.C.value(s + r) - A.C.value(s))


def execute_trade(A: Apmm, r, participant: str = "trader", ledger: Optional[Ledger] = None) -> TradeResult:
    """Sell bundle ``r`` to ``participant`` and move the market to ``s + r``.

    With a ``ledger`` the trade is also posted as the CLM bid ``s -> s + r``.
    """
    r = as_point(r, A.n)
    s = A.quantity
    s_new = s + r
    if ledger is not None:
        if not np.array_equal(ledger.current, s):
            raise DomainError("ledger and market disagree on the share vector")
        _, cost = post_bid(ledger, A.clm_spec(), participant, s_new)
        record = ledger.records[-1]
    else:
        cost = bundle_cost(A, r)
        record = TradeRecord(
            seq=A.trades,
            participant=participant,
            from_hypothesis=tuple(map(float, s)),
            to_hypothesis=tuple(map(float, s_new)),
            cost=cost,
            timestamp=A.trades,
        )
    A.quantity = s_new
    A.trades += 1
    return TradeResult(s_new.copy(), cost, record)


def holdings_from_ledger(ledger: Ledger) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    for rec in ledger.records:
        delta = np.asarray(rec.to_hypothesis) - np.asarray(rec.from_hypothesis)
        out[rec.participant] = out.get(rec.participant, 0.0) + delta
    return out


def settle_shares(A: Apmm, holdings: Dict[str, np.ndarray], X) -> Dict[str, float]:
    """Pay each holder ``rho(X) . bundle``."""
    payoff = A.payoff(X)
    return {name: float(payoff @ np.asarray(b, dtype=float)) for name, b in holdings.items()}


def instantaneous_prices(A: Apmm, s=None) -> np.ndarray:
    return A.C.gradient(A.quantity if s is None else as_point(s, A.n))


def direct_profit(A: Apmm, s_from, s_to, X) -> float:
    s_from = as_point(s_from, A.n)
    s_to = as_point(s_to, A.n)
    return float(A.payoff(X) @ (s_to - s_from) - A.C.value(s_to) + A.C.value(s_from))


def profit_as_divergence(A: Apmm, s_from, s_to, X) -> float:
    """``D_{C*}(rho(X), p_from) - D_{C*}(rho(X), p_to)`` at the two price vectors.

    Raises:
        DomainError: a price vector is on the boundary of ``dom C*``.
    """
    R = A.conjugate_potential()
    p_from = instantaneous_prices(A, s_from)
    p_to = instantaneous_prices(A, s_to)
    if not (R.in_interior(p_from) and R.in_interior(p_to)):
        raise DomainError("prices have reached the boundary of the derivative space")
    target = A.payoff(X)
    return float(R.bregman(target, p_from) - R.bregman(target, p_to))


# ---------------------------------------------------------------------------
# Duality
# ---------------------------------------------------------------------------


def _audit_profit(A: Apmm, L: Gsr, phi: Callable, seed: int, n_trades: int) -> None:
    rng = np.random.default_rng(seed)
    outcomes = A.outcomes.audit(seed)
    for _ in range(n_trades):
        s, s_new = 2.0 * rng.standard_normal((2, A.n))
        X = outcomes[rng.integers(len(outcomes))]
        direct = direct_profit(A, s, s_new, X)
        via_loss = float(L.loss(phi(s), X)) - float(L.loss(phi(s_new), X))
        if abs(direct - via_loss) > AUDIT_TOL * max(1.0, abs(direct)):
            raise ConstructionError(
                f"profit {direct:.12g} differs from loss gap {via_loss:.12g}", witness=(s, s_new, X)
            )


def gsr_of_apmm(A: Apmm, seed: int = 0, n_trades: int = 200) -> DivergenceGsr:
    """The rule ``D_{C*}(rho(X), w)`` on the derivative space that ``A`` implements.

    Audits that ``phi = grad C`` turns market profits into loss differences.
    """
    R = A.conjugate_potential()
    for X in A.outcomes.audit(seed):
        if not R.domain.contains(A.payoff(X), tol=1e-9):
            raise ConstructionError("payoff lies outside the derivative space", witness=X)
    L = divergence_gsr(R, A.rho, R.domain, A.outcomes, name=f"gsr({A.market_kind})")
    _audit_profit(A, L, A.C.gradient, seed, n_trades)
    return L


def apmm_of_gsr(L: DivergenceGsr, seed: int = 0, n_trades: int = 200) -> Apmm:
    """Market maker with ``C = R*`` implementing the divergence-based rule ``L``.

    Raises:
        ConstructionError: ``psi`` has no inverse, some payoff is outside
            ``psi(H)``, or the profit audit fails (witness attached).
    """
    if not isinstance(L, DivergenceGsr) or L.R is None:
        raise ConstructionError("apmm_of_gsr needs a divergence-based rule")
    if L.psi is not None and L.psi_inv is None:
        raise ConstructionError("psi must be one-to-one with a registered inverse")
    for X in L.outcomes.audit(seed):
        target = np.asarray(L.rho(X), dtype=float)
        w = target if L.psi is None else np.asarray(L.psi_inv(target), dtype=float)
        if not L.hypothesis_space.contains(w):
            raise ConstructionError("payoff lies outside psi(H)", witness=X)
    C = L.R.dual()
    kind = "lmsr" if isinstance(C, LogSumExp) else "apmm"
    params = {"n": C.dim, "eta": C.eta} if isinstance(C, LogSumExp) else {"n": C.dim}
    A = Apmm(C, L.rho, L.outcomes, market_kind=kind, parameters=params)
    if L.psi is None:
        phi = C.gradient
    else:
        phi = lambda s: L.psi_inv(C.gradient(s))  # noqa: E731
    _audit_profit(A, L, phi, seed, n_trades)
    return A


# ---------------------------------------------------------------------------
# Budget-constrained trading
# ---------------------------------------------------------------------------


def expected_profit(A: Apmm, r, P: Belief) -> float:
    r = as_point(r, A.n)
    return float(A.payoff(P) @ r - bundle_cost(A, r))


def _canonical(A: Apmm, r: np.ndarray) -> np.ndarray:
    return r - r.min() if A.buy_only else r


def optimal_trade(A: Apmm, P: Belief, B: float, opts: Optional[SolverOptions] = None) -> np.ndarray:
    """Expected-profit-maximizing bundle among those costing at most ``B``.

    For LMSR, bundles are restricted to purchases (``r >= 0``); any bundle
    equals a purchase up to the all-ones direction, which pays exactly what
    it costs.

    The constrained optimum is found by bisecting the multiplier ``mu`` of
    the budget constraint; each inner problem minimizes
    ``(1 + mu) C(s + r) - E[rho] . r`` with the projected-gradient solver.
    """
    if B < 0:
        raise DomainError("budget must be non-negative")
    opts = opts or SolverOptions()
    s = A.quantity
    mean = A.payoff(P)
    c0 = float(A.C.value(s))
    region = FeasibleSet.box(A.n, 0.0, np.inf) if A.buy_only else FeasibleSet.all_of(A.n)
    if B == 0 and A.buy_only:
        return np.zeros(A.n)

    def solve(mu: float, x0=None) -> np.ndarray:
        fun = lambda r: (1 + mu) * (float(A.C.value(s + r)) - c0) - float(mean @ r)  # noqa: E731
        grad = lambda r: (1 + mu) * A.C.gradient(s + r) - mean  # noqa: E731
        inner = SolverOptions(tol=opts.tol, max_iters=opts.max_iters, seed=opts.seed, n_starts=1)
        try:
            point = minimize(fun, region, inner, gradient=grad, x0=x0).point
        except NonConvergenceError as exc:
            # a stall just above tol is rounding noise; anything worse is real
            point = exc.best
            if np.linalg.norm(point - region.project(point - grad(point))) > STALL_TOL:
                raise
        return _canonical(A, point)

    def cost(r):
        return float(A.C.value(s + r)) - c0

    # unconstrained optimum: prices move to the mean payoff
    R = A.conjugate_potential()
    r_free = None
    if A.C.has_closed_conjugate and R.in_interior(mean):
        try:
            r_free = _canonical(A, A.C.conjugate_argmax(mean) - s)
        except DomainError:
            r_free = None
    if r_free is None:
        if not np.isfinite(B):
            if A.buy_only and not R.in_interior(mean):
                raise DomainError("mean payoff is on the boundary; the unconstrained trade is unbounded")
        r_free = solve(0.0, np.zeros(A.n))
    if cost(r_free) <= B + 1e-12:
        return r_free

    lo, hi = 0.0, 1.0
    r_hi = solve(hi, r_free)
    while cost(r_hi) > B:
        lo, hi = hi, hi * 2.0
        r_hi = solve(hi, r_hi)
        if hi > 1e12:
            return np.zeros(A.n)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        r_mid = solve(mid, r_hi)
        if cost(r_mid) > B:
            lo = mid
        else:
            hi, r_hi = mid, r_mid
        if hi - lo <= 1e-13 * max(1.0, hi):
            break
    return r_hi
