"""Seeded trading strategies that propose bids against a published hypothesis."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .convex import SolverOptions
from .errors import ClmError, DomainError
from .mechanism import ClmSpec
from .scoring import Belief, DivergenceGsr, mean_minimizer, minimize_expected_loss

STRATEGIES = ("informed", "budget_optimizer", "noise")
PROFIT_EPS = 1e-12


@dataclass
class TraderAgent:
    """One participant.

    ``informed`` bids the expected-loss minimizer under ``belief``;
    ``budget_optimizer`` does the same within the region it can afford with
    ``budget``; ``noise`` moves the hypothesis by a random Gaussian step of
    size ``step_scale`` projected back into the hypothesis space.
    """

    id: str
    strategy: str
    belief: Optional[Belief] = None
    budget: float = np.inf
    step_scale: float = 0.1
    cash: float = np.inf

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise DomainError(f"unknown strategy {self.strategy!r}")
        if self.strategy != "noise" and self.belief is None:
            raise DomainError(f"{self.strategy} agent needs a belief")
        if self.budget < 0 or self.cash < 0:
            raise DomainError("budget and cash must be non-negative")


@dataclass
class Action:
    bid: Optional[np.ndarray]
    note: str = ""


def _best_response(spec: ClmSpec, P: Belief, region, w_current, seed: int) -> np.ndarray:
    L = spec.gsr
    if region is spec.hypothesis_space and isinstance(L, DivergenceGsr):
        try:
            return mean_minimizer(L, P)
        except DomainError:
            pass
    restricted = replace(L, hypothesis_space=region)
    return minimize_expected_loss(restricted, P, seed=seed, opts=SolverOptions(seed=seed), x0=region.project(w_current))


def agent_act(agent: TraderAgent, spec: ClmSpec, w_current, rng: np.random.Generator) -> Action:
    """Propose a bid, or pass with ``Action(None, reason)``.

    Bids never move frozen coordinates; solver failures become passes.
    """
    w_current = np.asarray(w_current, dtype=float)
    H = spec.hypothesis_space
    try:
        if agent.strategy == "noise":
            step = agent.step_scale * rng.standard_normal(spec.dim)
            bid = H.project(w_current + step)
        else:
            if agent.strategy == "budget_optimizer":
                if agent.budget <= 0:
                    return Action(None, "zero budget")
                region = spec.budget_region(w_current, agent.budget)
            else:
                region = H
            seed = int(rng.integers(2**31))
            bid = _best_response(spec, agent.belief, region, w_current, seed)
    except ClmError as exc:
        return Action(None, f"solver failure: {exc}")
    if spec.adjust_bid is not None:
        bid = spec.adjust_bid(w_current, bid)
    if agent.strategy != "noise":
        gain = float(spec.loss(w_current, agent.belief)) - float(spec.loss(bid, agent.belief))
        if not gain > PROFIT_EPS:
            return Action(None, "no profitable bid")
        if agent.strategy == "budget_optimizer" and spec.cost(w_current, bid) > agent.budget + 1e-9:
            return Action(None, "best bid exceeds budget")
    if np.array_equal(bid, w_current):
        return Action(None, "null bid")
    return Action(bid)
