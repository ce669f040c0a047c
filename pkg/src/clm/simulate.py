"""Config-driven simulation: agents bid for ``rounds`` rounds, then settle.

A config is a JSON object::

    {"market": {"kind": "compression", "n": 2, "stream": [0, 1, 1, 1]},
     "agents": [{"id": "a", "strategy": "informed", "belief": "truth"}],
     "rounds": 5, "seed": 7, "settlement": "empirical",
     "ledger_path": "run.ledger.jsonl", "report_path": "run.report.jsonl"}

Optional keys: ``vouchers`` (``{"count": m, "amount": c}``), ``scheduler``
(``"round_robin"`` or ``"shuffle"``), ``close_when_idle`` (stop after a
round with no bids). Unknown keys are errors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .agents import STRATEGIES, TraderAgent, agent_act
from .errors import ClmError, ConfigError, InvariantError, RejectedBid
from .ledger_io import write_jsonl, write_ledger
from .markets import (
    CompressionMarket,
    LabelMarket,
    RegressionMarket,
    compression_clm,
    label_clm,
    load_batch,
    mini_payout,
    regression_clm,
)
from .mechanism import (
    Accounts,
    ClmSpec,
    Ledger,
    VoucherPool,
    issue_voucher,
    mechanism_loss,
    open_ledger,
    post_bid,
    settle,
    worst_case_loss,
)
from .scoring import Batch, Belief
from .streams import stream

ZERO_SUM_TOL = 1e-9

CONFIG_KEYS = {
    "market",
    "agents",
    "rounds",
    "seed",
    "settlement",
    "report_path",
    "ledger_path",
    "vouchers",
    "scheduler",
    "close_when_idle",
}
MARKET_KEYS = {
    "compression": {"kind", "n", "q0", "alpha", "stream", "floor"},
    "regression": {"kind", "d", "alpha", "test_batch", "test_csv"},
    "label": {"kind", "m", "K", "alpha", "w0", "labels", "schedule"},
}
AGENT_KEYS = {"id", "strategy", "belief", "budget", "step_scale", "cash"}
SETTLEMENTS = {"compression": ("empirical", "sample"), "regression": ("batch",), "label": ("labels",)}


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ConfigError(f"unknown keys in {where}: {extra}")


@dataclass
class SimConfig:
    market: Dict[str, Any]
    agents: List[Dict[str, Any]]
    rounds: int
    seed: int = 0
    settlement: Optional[str] = None
    report_path: Optional[str] = None
    ledger_path: Optional[str] = None
    vouchers: Optional[Dict[str, Any]] = None
    scheduler: str = "round_robin"
    close_when_idle: bool = False
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, obj: dict) -> "SimConfig":
        _check_keys(obj, CONFIG_KEYS, "config")
        for key in ("market", "agents", "rounds"):
            if key not in obj:
                raise ConfigError(f"config is missing {key!r}")
        market = obj["market"]
        if not isinstance(market, dict) or market.get("kind") not in MARKET_KEYS:
            raise ConfigError(f"market.kind must be one of {sorted(MARKET_KEYS)}")
        _check_keys(market, MARKET_KEYS[market["kind"]], "market")
        if not isinstance(obj["agents"], list):
            raise ConfigError("agents must be a list")
        ids = []
        for k, a in enumerate(obj["agents"]):
            _check_keys(a, AGENT_KEYS, f"agents[{k}]")
            if "id" not in a or a.get("strategy") not in STRATEGIES:
                raise ConfigError(f"agents[{k}] needs an id and a strategy in {STRATEGIES}")
            ids.append(str(a["id"]))
        if len(set(ids)) != len(ids):
            raise ConfigError("agent ids must be unique")
        rounds, seed = obj["rounds"], obj.get("seed", 0)
        if not isinstance(rounds, int) or rounds < 0:
            raise ConfigError("rounds must be a non-negative integer")
        if not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise ConfigError("seed must be a 64-bit non-negative integer")
        settlement = obj.get("settlement") or SETTLEMENTS[market["kind"]][0]
        if settlement not in SETTLEMENTS[market["kind"]]:
            raise ConfigError(f"settlement for {market['kind']} must be one of {SETTLEMENTS[market['kind']]}")
        scheduler = obj.get("scheduler", "round_robin")
        if scheduler not in ("round_robin", "shuffle"):
            raise ConfigError("scheduler must be 'round_robin' or 'shuffle'")
        vouchers = obj.get("vouchers")
        if vouchers is not None:
            _check_keys(vouchers, {"count", "amount"}, "vouchers")
        return cls(
            market=market,
            agents=obj["agents"],
            rounds=rounds,
            seed=seed,
            settlement=settlement,
            report_path=obj.get("report_path"),
            ledger_path=obj.get("ledger_path"),
            vouchers=vouchers,
            scheduler=scheduler,
            close_when_idle=bool(obj.get("close_when_idle", False)),
            raw=obj,
        )


def load_config(path) -> SimConfig:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return SimConfig.from_dict(obj)


# ---------------------------------------------------------------------------
# Market assembly
# ---------------------------------------------------------------------------


@dataclass
class Market:
    """A built market: its spec, the settlement outcome and the market object."""

    kind: str
    spec: ClmSpec
    truth: Any
    obj: Any


def build_market(cfg: SimConfig) -> Market:
    m = dict(cfg.market)
    kind = m.pop("kind")
    try:
        if kind == "compression":
            market = CompressionMarket(
                m["n"], m.get("q0"), m.get("alpha", 1.0), m.get("stream", ()), cfg.seed, m.get("floor", 1e-9)
            )
            spec = compression_clm(market)
            truth = market.empirical() if market.stream else None
        elif kind == "regression":
            if "test_csv" in m:
                batch = load_batch(m["test_csv"], m["d"])
            elif "test_batch" in m:
                batch = Batch(m["test_batch"]["x"], m["test_batch"]["y"])
            else:
                raise ConfigError("regression market needs test_batch or test_csv")
            market = RegressionMarket(m["d"], m.get("alpha", 1.0), batch)
            spec = regression_clm(market)
            truth = batch
        else:
            schedule = [[int(k) for k in b["indices"]] for b in m.get("schedule", [])]
            market = LabelMarket(
                m["m"], tuple(m.get("K", (1.0, 5.0))), m.get("alpha", 1.0), m.get("w0"), schedule=schedule
            )
            spec = label_clm(market)
            if "labels" not in m:
                raise ConfigError("label market needs labels")
            truth = np.asarray(m["labels"], dtype=float)
            spec.outcomes.validate(truth)
    except ConfigError:
        raise
    except KeyError as exc:
        raise ConfigError(f"market is missing {exc}") from exc
    except (ClmError, TypeError, ValueError) as exc:
        raise ConfigError(f"market: {exc}") from exc
    if truth is None:
        raise ConfigError("compression market needs a non-empty stream")
    return Market(kind, spec, truth, market)


def settlement_outcome(market: Market, cfg: SimConfig):
    if market.kind == "compression" and cfg.settlement == "sample":
        rng = stream(cfg.seed, "settlement")
        s = market.obj.stream
        return s[int(rng.integers(len(s)))]
    return market.truth


def _belief(market: Market, spec_obj) -> Belief:
    if spec_obj == "truth" or spec_obj is None:
        return market.truth if isinstance(market.truth, Belief) else Belief.point(market.truth)
    try:
        if market.kind == "compression":
            return Belief.over_finite(spec_obj)
        if market.kind == "regression":
            return Belief.point(Batch(spec_obj["x"], spec_obj["y"]))
        y = np.asarray(spec_obj, dtype=float)
        market.spec.outcomes.validate(y)
        return Belief.point(y)
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"bad belief {spec_obj!r}: {exc}") from exc


def build_agents(cfg: SimConfig, market: Market) -> List[TraderAgent]:
    out = []
    for a in cfg.agents:
        belief = None if a["strategy"] == "noise" else _belief(market, a.get("belief", "truth"))
        try:
            out.append(
                TraderAgent(
                    str(a["id"]),
                    a["strategy"],
                    belief,
                    float(a.get("budget", np.inf)),
                    float(a.get("step_scale", 0.1)),
                    float(a["cash"]) if a.get("cash") is not None else np.inf,
                )
            )
        except ClmError as exc:
            raise ConfigError(f"agent {a['id']!r}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# Run
# ---------------------------------------------------------------------------


@dataclass
class SimResult:
    ledger: Ledger
    report: List[dict]
    spec: ClmSpec
    outcome: Any


def _finite(v):
    return float(v) if np.isfinite(v) else None


def _pay_block(market: Market, ledger, spec, block, X, t: int, events: List[dict]) -> None:
    pays = mini_payout(market.obj, ledger, spec, block, X[block])
    events.append({"round": t, "event": "mini_payout", "indices": [int(k) for k in block], "payouts": pays})


def run_simulation(cfg: SimConfig, write: bool = True) -> SimResult:
    """Run ``cfg`` and (optionally) write its ledger and report files.

    Raises:
        ConfigError: invalid market or agent settings.
        InvariantError: a zero-sum, escrow or voucher identity failed.
    """
    market = build_market(cfg)
    spec = market.spec
    agents = build_agents(cfg, market)
    rngs = {a.id: stream(cfg.seed, f"agent:{a.id}") for a in agents}
    order_rng = stream(cfg.seed, "scheduler")

    pool = None
    if cfg.vouchers:
        pool = VoucherPool(int(cfg.vouchers.get("count", 0)), float(cfg.vouchers.get("amount", 0.0)))
        for a in agents[: pool.count_m]:
            issue_voucher(pool, a.id)
    accounts = Accounts({a.id: a.cash for a in agents}, pool)

    X = settlement_outcome(market, cfg)
    ledger = open_ledger(spec, cfg.seed)
    events: List[dict] = []
    trajectory = [float(spec.loss(ledger.current, X))]
    mini_rounds: Dict[int, list] = {}
    if market.kind == "label":
        for block, entry in zip(market.obj.schedule, cfg.market.get("schedule", [])):
            mini_rounds.setdefault(int(entry.get("round", cfg.rounds)), []).append(block)

    for t in range(cfg.rounds):
        order = list(agents)
        if cfg.scheduler == "shuffle":
            order = [order[i] for i in order_rng.permutation(len(order))]
        bids = 0
        for agent in order:
            act = agent_act(agent, spec, ledger.current, rngs[agent.id])
            if act.bid is None:
                events.append({"round": t, "agent": agent.id, "event": "pass", "reason": act.note})
                continue
            try:
                post_bid(ledger, spec, agent.id, act.bid, accounts)
                bids += 1
            except RejectedBid as exc:
                events.append({"round": t, "agent": agent.id, "event": "rejected", "reason": str(exc)})
        trajectory.append(float(spec.loss(ledger.current, X)))
        for block in mini_rounds.pop(t + 1, []):
            _pay_block(market, ledger, spec, block, X, t, events)
        if cfg.close_when_idle and bids == 0:
            events.append({"round": t, "event": "closed", "reason": "no bids in a full round"})
            break

    if market.kind == "label":
        rest = [k for k in range(market.obj.m) if k not in market.obj.frozen]
        for block in [b for r in sorted(mini_rounds) for b in mini_rounds[r]]:
            _pay_block(market, ledger, spec, block, X, cfg.rounds, events)
            rest = [k for k in rest if k not in block]
        if rest:
            _pay_block(market, ledger, spec, rest, X, cfg.rounds, events)
        payouts = dict(market.obj.paid)
        for name, v in payouts.items():
            accounts.credit(name, v)
    else:
        payouts = settle(ledger, spec, X, accounts)

    costs = ledger.costs_by_participant()
    record_pays = ledger.settlement.record_payouts if ledger.settlement else []
    if any(p < -1e-12 for p in record_pays):
        raise InvariantError("negative payout at settlement", witness=record_pays)
    mech = mechanism_loss(spec, ledger, X)
    profits = {a.id: payouts.get(a.id, 0.0) - costs.get(a.id, 0.0) for a in agents}
    residual = sum(profits.values()) - mech
    if abs(residual) > ZERO_SUM_TOL * max(1.0, abs(mech)):
        raise InvariantError(f"agent profits miss the mechanism loss by {residual:.3g}", witness=profits)
    drawn = pool.drawn if pool else 0.0
    if pool and drawn > pool.count_m * pool.amount_c + 1e-12:
        raise InvariantError("voucher draws exceed the pool", witness=drawn)

    try:
        wcl = _finite(worst_case_loss(spec, seed=cfg.seed))
    except ClmError:
        wcl = None
    report = [{"type": "config", "config": {k: v for k, v in cfg.raw.items()}}]
    for a in agents:
        report.append(
            {
                "type": "agent",
                "id": a.id,
                "cost": costs.get(a.id, 0.0),
                "payout": payouts.get(a.id, 0.0),
                "profit": profits[a.id],
            }
        )
    report.append(
        {
            "type": "mechanism",
            "loss": mech,
            "zero_sum_residual": residual,
            "voucher_liability": pool.liability if pool else 0.0,
            "voucher_drawn": drawn,
            "worst_case_loss": wcl,
            "final_hypothesis": [float(v) for v in ledger.current],
            "bids": len(ledger.records),
        }
    )
    report.extend({"type": "trajectory", "round": t, "audit_loss": v} for t, v in enumerate(trajectory))
    report.extend({"type": "event", **e} for e in events)
    if write:
        if cfg.ledger_path:
            write_ledger(cfg.ledger_path, ledger, spec.outcomes)
        if cfg.report_path:
            write_jsonl(cfg.report_path, report)
    return SimResult(ledger, report, spec, X)
