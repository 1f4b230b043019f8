"""Append-only session audit log: JSONL, one event per line.

Events are the single source of truth for session state: the live engine
mutates state only by applying events, and replaying a log reproduces the
state (and cost ledger) bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

KINDS = ("propose", "verify_batch", "modify_shape", "finetune",
         "node_complete", "session_complete")


class AuditError(ValueError):
    pass


@dataclass(frozen=True)
class AuditEvent:
    seq: int
    timestamp: float
    session_id: str
    kind: str
    payload: dict
    simulated_cost_seconds: float

    def to_line(self) -> str:
        if self.kind not in KINDS:
            raise AuditError(f"unknown event kind {self.kind!r}")
        obj = {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "session_id": self.session_id,
            "kind": self.kind,
            "payload": self.payload,
            "simulated_cost_seconds": self.simulated_cost_seconds,
        }
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def parse_event(line: str, line_no: int) -> AuditEvent:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        raise AuditError(f"line {line_no}: truncated or corrupt event") from None
    try:
        event = AuditEvent(
            seq=int(obj["seq"]),
            timestamp=float(obj["timestamp"]),
            session_id=str(obj["session_id"]),
            kind=str(obj["kind"]),
            payload=obj["payload"],
            simulated_cost_seconds=float(obj["simulated_cost_seconds"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise AuditError(f"line {line_no}: malformed event ({exc})") from None
    if event.kind not in KINDS:
        raise AuditError(f"line {line_no}: unknown event kind {event.kind!r}")
    return event


class AuditWriter:
    """Single-writer append log; also keeps events in memory for the session."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.events: list[AuditEvent] = []
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", encoding="utf-8", newline="\n")

    def append(self, event: AuditEvent) -> None:
        if event.seq != len(self.events):
            raise AuditError(
                f"event seq {event.seq} out of order (expected {len(self.events)})")
        self.events.append(event)
        if self._fh is not None:
            self._fh.write(event.to_line() + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_audit(path: str | Path) -> list[AuditEvent]:
    """Read a complete log; truncation and order violations are errors."""
    path = Path(path)
    if not path.exists():
        raise AuditError(f"audit log not found: {path}")
    text = path.read_text(encoding="utf-8")
    events: list[AuditEvent] = []
    if not text:
        return events
    if not text.endswith("\n"):
        n_lines = text.count("\n") + 1
        raise AuditError(f"line {n_lines}: truncated or corrupt event")
    for i, line in enumerate(text.split("\n")[:-1], start=1):
        event = parse_event(line, i)
        if event.seq != len(events):
            raise AuditError(
                f"line {i}: out-of-order event (seq {event.seq}, "
                f"expected {len(events)})")
        events.append(event)
    return events
