"""Parsing, serialization and windowing of the supervised agent's JSONL event log."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any

from .timeutil import ensure_utc, format_iso, parse_iso

log = logging.getLogger(__name__)

KNOWN_STATUSES = frozenset({"success", "ok", "delay", "fail", "info", "error"})
DEFAULT_LOG_PATH = Path("logs/events.jsonl")
DEFAULT_WINDOW_HOURS = 24.0
DEFAULT_MAX_EVENTS = 500


class EventParseError(ValueError):
    """Base class for a log line that cannot become an Event."""


class MalformedLineError(EventParseError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"malformed JSON at byte {offset}: {message}")
        self.offset = offset


class EventSchemaError(EventParseError):
    def __init__(self, field_name: str, detail: str = "missing field"):
        super().__init__(f"{detail}: {field_name}")
        self.field = field_name


class TimestampError(EventParseError):
    pass


@dataclass(frozen=True)
class Event:
    ts: datetime
    kind: str
    status: str
    payload: dict[str, Any] = field(default_factory=dict)
    ts_was_naive: bool = False

    @property
    def cause(self) -> str:
        return f"{self.kind}:{self.status}"

    def delay_sec(self) -> float | None:
        """``payload.delayed_by_sec`` as a non-negative float, or None."""
        raw = self.payload.get("delayed_by_sec")
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            return None
        return max(0.0, float(raw))


def parse_event(line: str) -> Event:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        offset = len(line[: exc.pos].encode("utf-8"))
        raise MalformedLineError(exc.msg, offset) from None
    if not isinstance(obj, dict):
        raise MalformedLineError("top-level value is not an object", 0)

    for name in ("ts", "kind"):
        if name not in obj:
            raise EventSchemaError(name)
    raw_ts = obj["ts"]
    if not isinstance(raw_ts, str):
        raise TimestampError(f"unparseable timestamp: {raw_ts!r}")
    try:
        ts, naive = parse_iso(raw_ts)
    except ValueError:
        raise TimestampError(f"unparseable timestamp: {raw_ts!r}") from None

    kind = obj["kind"]
    if not isinstance(kind, str) or not kind or any(c.isspace() for c in kind):
        raise EventSchemaError("kind", "invalid field")
    status = obj.get("status", "info")
    if not isinstance(status, str):
        raise EventSchemaError("status", "invalid field")
    payload = obj.get("payload") or {}
    if not isinstance(payload, dict):
        raise EventSchemaError("payload", "invalid field")
    return Event(ts=ts, kind=kind, status=status, payload=payload, ts_was_naive=naive)


def serialize_event(e: Event) -> str:
    """One JSON line (no trailing newline). Naive-sourced events stay naive."""
    return json.dumps(
        {
            "ts": format_iso(e.ts, naive=e.ts_was_naive),
            "kind": e.kind,
            "status": e.status,
            "payload": e.payload,
        },
        ensure_ascii=False,
    )


def append_event(path: str | os.PathLike, e: Event) -> None:
    """Append exactly one line. Fails if the parent directory is missing."""
    line = serialize_event(e) + "\n"
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(line)


class EventWindow(list):
    """A list of events that also remembers how many lines were skipped."""

    def __init__(self, events=(), skipped: int = 0):
        super().__init__(events)
        self.skipped = skipped


def read_events(path: str | os.PathLike) -> EventWindow:
    """Every parseable event in file order; malformed lines are counted."""
    events: list[Event] = []
    skipped = 0
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                events.append(parse_event(line))
            except EventParseError as exc:
                skipped += 1
                log.debug("skipping line %d of %s: %s", lineno, path, exc)
    return EventWindow(events, skipped)


def load_window(
    path: str | os.PathLike,
    now: datetime,
    window_hours: float = DEFAULT_WINDOW_HOURS,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> EventWindow:
    """Events with ``now - window_hours <= ts <= now``, ascending, newest ``max_events`` kept."""
    if window_hours <= 0:
        raise ValueError("window_hours must be positive")
    if max_events <= 0:
        raise ValueError("max_events must be positive")
    now = ensure_utc(now)
    start = now - timedelta(hours=window_hours)
    raw = read_events(path)
    kept = sorted((e for e in raw if start <= e.ts <= now), key=lambda e: e.ts)
    if raw.skipped:
        log.warning("%s: skipped %d malformed line(s)", path, raw.skipped)
    return EventWindow(kept[-max_events:], raw.skipped)
