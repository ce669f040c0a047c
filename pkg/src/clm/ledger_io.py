"""Line-delimited JSON persistence and replay verification of ledgers.

File layout: a header line ``{"header": {...}, "digest": sha256}``, one line
per trade record, and optionally a final ``{"settlement": {...}}`` line.
Floats are written with ``repr``, the shortest decimal that round-trips.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import DigestMismatch, LedgerParseError
from .markets import spec_from_header
from .mechanism import Ledger, Settlement, TradeRecord, spec_digest

PAYOUT_TOL = 1e-12


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_jsonl(path, rows: Iterable[dict]) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        for row in rows:
            fh.write(dumps(row) + "\n")
    os.replace(tmp, path)


def ledger_lines(ledger: Ledger, outcomes=None) -> list:
    rows = [{"header": ledger.header, "digest": ledger.spec_digest}]
    rows.extend(r.to_json() for r in ledger.records)
    if ledger.settlement is not None:
        st = ledger.settlement
        outcome = outcomes.encode(st.outcome) if outcomes is not None else st.outcome
        rows.append(
            {
                "settlement": {
                    "outcome": outcome,
                    "payouts": st.payouts,
                    "record_payouts": list(st.record_payouts),
                }
            }
        )
    return rows


def write_ledger(path, ledger: Ledger, outcomes=None) -> None:
    """Write ``ledger``; ``outcomes`` encodes the settlement outcome."""
    write_jsonl(path, ledger_lines(ledger, outcomes))


def _require(obj, keys, line):
    missing = [k for k in keys if k not in obj]
    if missing:
        raise LedgerParseError(f"missing fields {missing}", line)


def read_ledger(path, check_digest: bool = True) -> Ledger:
    """Parse a ledger file; the settlement outcome is left JSON-encoded.

    Raises:
        LedgerParseError: malformed line, with its 1-based line number.
        DigestMismatch: the stored digest disagrees with the header.
    """
    with open(path) as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    elif lines:
        raise LedgerParseError("truncated final line (no newline)", len(lines))
    if not lines:
        raise LedgerParseError("empty ledger file", 1)
    parsed = []
    for k, line in enumerate(lines, start=1):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LedgerParseError(f"invalid JSON ({exc.msg})", k) from None
        if not isinstance(obj, dict):
            raise LedgerParseError("expected an object", k)
        parsed.append(obj)
    head = parsed[0]
    _require(head, ("header", "digest"), 1)
    header = head["header"]
    _require(header, ("market_kind", "parameters", "w0", "alpha", "seed"), 1)
    if check_digest and spec_digest(header) != head["digest"]:
        raise DigestMismatch("stored digest does not match the header")
    ledger = Ledger(header=header, spec_digest=head["digest"])
    body = parsed[1:]
    for k, obj in enumerate(body, start=2):
        if "settlement" in obj:
            if k != len(parsed):
                raise LedgerParseError("settlement must be the final line", k)
            st = obj["settlement"]
            _require(st, ("outcome", "payouts"), k)
            ledger.status = "settled"
            ledger.settlement = Settlement(st["outcome"], st["payouts"], st.get("record_payouts", []))
            break
        _require(obj, ("seq", "participant", "from", "to", "cost"), k)
        try:
            rec = TradeRecord(
                seq=int(obj["seq"]),
                participant=str(obj["participant"]),
                from_hypothesis=tuple(float(v) for v in obj["from"]),
                to_hypothesis=tuple(float(v) for v in obj["to"]),
                cost=float(obj["cost"]),
                timestamp=int(obj["seq"]),
            )
        except (TypeError, ValueError) as exc:
            raise LedgerParseError(f"bad field value ({exc})", k) from None
        ledger.records.append(rec)
    return ledger


@dataclass
class Verdict:
    ok: bool
    first_bad_seq: Optional[int] = None
    message: str = "ledger verified"

    def to_json(self) -> dict:
        return {"ok": self.ok, "first_bad_seq": self.first_bad_seq, "message": self.message}


def verify_ledger(ledger: Ledger, spec) -> Verdict:
    """Recompute every cost, chain link and payout of a parsed ledger."""
    prev = np.asarray(ledger.header["w0"], dtype=float)
    if not np.array_equal(prev, spec.initial_hypothesis):
        return Verdict(False, None, "header w0 does not match the market")
    for i, rec in enumerate(ledger.records):
        w = np.asarray(rec.from_hypothesis, dtype=float)
        w_new = np.asarray(rec.to_hypothesis, dtype=float)
        if rec.seq != i:
            return Verdict(False, rec.seq, f"expected seq {i}, found {rec.seq}")
        if not np.array_equal(w, prev):
            return Verdict(False, rec.seq, "chain broken: from does not match previous to")
        if w.shape != (spec.dim,) or w_new.shape != (spec.dim,):
            return Verdict(False, rec.seq, "hypothesis has the wrong dimension")
        if not spec.hypothesis_space.contains(w_new):
            return Verdict(False, rec.seq, "hypothesis outside the hypothesis space")
        with np.errstate(divide="ignore", invalid="ignore"):
            cost = spec.cost(w, w_new)
        if cost != rec.cost:
            return Verdict(False, rec.seq, f"cost {rec.cost!r} recomputes to {cost!r}")
        prev = w_new
    st = ledger.settlement
    if st is not None:
        try:
            X = spec.outcomes.decode(st.outcome)
        except Exception as exc:  # noqa: BLE001 - any decode failure is a verification failure
            return Verdict(False, None, f"settlement outcome does not decode: {exc}")
        totals: dict = {}
        for i, rec in enumerate(ledger.records):
            p = spec.payout(rec.from_hypothesis, rec.to_hypothesis, X)
            if st.record_payouts:
                if i >= len(st.record_payouts) or abs(p - st.record_payouts[i]) > PAYOUT_TOL * max(1.0, abs(p)):
                    return Verdict(False, rec.seq, f"payout recomputes to {p!r}")
            totals[rec.participant] = totals.get(rec.participant, 0.0) + p
        if set(totals) != set(st.payouts):
            return Verdict(False, None, "settlement participants differ from the records")
        for name, v in totals.items():
            if abs(v - float(st.payouts[name])) > PAYOUT_TOL * max(1.0, abs(v)):
                return Verdict(False, None, f"total payout of {name!r} recomputes to {v!r}")
    return Verdict(True)


def replay_verify(path) -> Verdict:
    """Parse ``path``, rebuild its market and verify every entry.

    Raises:
        LedgerParseError, DigestMismatch: as :func:`read_ledger`.
        ConfigError: the header names an unknown market.
    """
    ledger = read_ledger(path)
    spec = spec_from_header(ledger.header)
    return verify_ledger(ledger, spec)
