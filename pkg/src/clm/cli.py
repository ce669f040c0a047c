"""Command-line entry point.

Exit codes: 0 success, 1 invariant or verification failure, 2 usage or
parse error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .errors import (
    BatchError,
    ClmError,
    ConfigError,
    DigestMismatch,
    InvariantError,
    LedgerParseError,
    LedgerStateError,
    RejectedBid,
)
from .ledger_io import dumps, read_ledger, replay_verify, write_ledger
from .markets import spec_from_header
from .mechanism import ESCROW_SLACK, settle, worst_case_loss
from .simulate import build_market, load_config, run_simulation

OK, FAILED, USAGE = 0, 1, 2


def _emit(obj) -> None:
    print(dumps(obj))


def _parse_json_arg(text: str, what: str):
    if text.startswith("@"):
        with open(text[1:]) as fh:
            text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} is not valid JSON: {exc.msg}") from exc


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.ledger:
        cfg.ledger_path = args.ledger
    if args.report:
        cfg.report_path = args.report
    result = run_simulation(cfg)
    for row in result.report:
        if row["type"] in ("agent", "mechanism"):
            _emit(row)
    return OK


def cmd_settle(args) -> int:
    ledger = read_ledger(args.ledger)
    spec = spec_from_header(ledger.header)
    X = spec.outcomes.decode(_parse_json_arg(args.outcome, "outcome"))
    payouts = settle(ledger, spec, X)
    write_ledger(args.out or args.ledger, ledger, spec.outcomes)
    _emit({"payouts": payouts})
    return OK


def cmd_replay(args) -> int:
    verdict = replay_verify(args.ledger)
    _emit(verdict.to_json())
    return OK if verdict.ok else FAILED


def cmd_worst_case(args) -> int:
    spec = build_market(load_config(args.config)).spec
    wcl = worst_case_loss(spec, args.step)
    _emit({"market_kind": spec.market_kind, "alpha": float(spec.alpha), "worst_case_loss": wcl})
    return OK


def cmd_quote(args) -> int:
    cfg = load_config(args.config)
    spec = build_market(cfg).spec
    w = spec.initial_hypothesis
    if args.ledger:
        w = read_ledger(args.ledger).current
    bid = np.asarray(_parse_json_arg(args.bid, "bid"), dtype=float)
    if bid.shape != (spec.dim,):
        raise ConfigError(f"bid must have {spec.dim} entries")
    if not spec.hypothesis_space.contains(bid):
        raise RejectedBid("bid lies outside the hypothesis space")
    with np.errstate(divide="ignore"):
        cost = spec.cost(w, bid)
    if not np.isfinite(cost):
        raise RejectedBid("bid has infinite cost")
    pays = [spec.payout(w, bid, X) for X in spec.outcomes.audit(cfg.seed)]
    _emit(
        {
            "from": [float(v) for v in w],
            "to": [float(v) for v in bid],
            "cost": cost,
            "min_payout": min(pays),
            "max_payout": max(pays),
            "escrow_ok": min(pays) >= -ESCROW_SLACK,
        }
    )
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clm", description="Crowdsourced learning markets")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a config; write ledger and report")
    s.add_argument("--config", required=True)
    s.add_argument("--ledger", help="override ledger_path")
    s.add_argument("--report", help="override report_path")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("settle", help="settle an open ledger against an outcome")
    s.add_argument("--ledger", required=True)
    s.add_argument("--outcome", required=True, help="JSON outcome, or @file")
    s.add_argument("--out", help="write the settled ledger here instead of in place")
    s.set_defaults(func=cmd_settle)

    s = sub.add_parser("replay", help="verify a ledger file")
    s.add_argument("--ledger", required=True)
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("worst-case", help="audit worst-case loss of a config's market")
    s.add_argument("--config", required=True)
    s.add_argument("--step", type=float, default=1e-2)
    s.set_defaults(func=cmd_worst_case)

    s = sub.add_parser("quote", help="preview cost and payouts of a bid")
    s.add_argument("--config", required=True)
    s.add_argument("--bid", required=True, help="JSON list, or @file")
    s.add_argument("--ledger", help="quote from this ledger's current hypothesis")
    s.set_defaults(func=cmd_quote)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code else OK
    try:
        return args.func(args)
    except (InvariantError, LedgerStateError, RejectedBid) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILED
    except (ConfigError, LedgerParseError, DigestMismatch, BatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except OSError as exc:
        print(f"error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return USAGE
    except ClmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILED


if __name__ == "__main__":
    sys.exit(main())
