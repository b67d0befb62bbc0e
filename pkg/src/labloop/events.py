"""Append-only run event log: the replay and metrics substrate.

Events carry a gapless sequence number and the logical world tick;
payloads never contain wall-clock time or the run id, so two runs with
the same configuration and seed produce byte-identical payload streams.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IoError, SchemaError

EVENT_KINDS = (
    "run_started",
    "pre_verdict",
    "execution",
    "post_verdict",
    "decision",
    "reorder",
    "escalation",
    "intervention",
    "subtask_done",
    "run_finished",
)

FINAL_STATUSES = ("completed", "aborted", "suspended")


@dataclass(frozen=True)
class Event:
    seq: int
    tick: int
    kind: str
    payload: dict

    def __post_init__(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")

    def to_line(self, run_id: str) -> str:
        return json.dumps(
            {"run_id": run_id, "seq": self.seq, "tick": self.tick, "kind": self.kind, "payload": self.payload},
            sort_keys=False,
        )


@dataclass
class RunRecord:
    run_id: str
    events: list[Event] = field(default_factory=list)
    final_status: str | None = None  # None while in flight

    def append(self, kind: str, tick: int, payload: dict) -> Event:
        event = Event(seq=len(self.events) + 1, tick=tick, kind=kind, payload=payload)
        self.events.append(event)
        return event

    def events_of(self, kind: str) -> list[Event]:
        return [e for e in self.events if e.kind == kind]

    def payload_sequence(self) -> list[tuple[str, dict]]:
        """(kind, payload) stream used for replay-determinism comparisons."""
        return [(e.kind, e.payload) for e in self.events]


def write_jsonl(record: RunRecord, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for event in record.events:
            fh.write(event.to_line(record.run_id) + "\n")


def read_jsonl(path: str | Path) -> RunRecord:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoError(f"cannot read event log {path}: {exc}") from exc
    events: list[Event] = []
    run_id = ""
    for line in lines:
        if not line.strip():
            continue
        try:
            data = json.loads(line)
            run_id = data["run_id"]
            events.append(Event(seq=data["seq"], tick=data["tick"], kind=data["kind"], payload=data["payload"]))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise SchemaError(f"malformed event line in {path}: {exc}") from exc
    final_status = None
    for event in reversed(events):
        if event.kind == "run_finished":
            final_status = event.payload.get("status")
            break
    if final_status is None and events:
        final_status = "suspended"
    return RunRecord(run_id=run_id, events=events, final_status=final_status)
