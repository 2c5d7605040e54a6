"""Deterministic synthetic reminder-agent traces and a matching toy repository."""
from __future__ import annotations

import os
import random
import statistics
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable

from .appraisal import appraise_event
from .events import Event, append_event, read_events
from .proposals.templates import PYTHON_RELIABILITY
from .timeutil import ensure_utc, format_iso

TRACE_SPAN = timedelta(hours=22)
TOAST_OFFSET = timedelta(seconds=1)
POST_FIX_TOAST_OFFSET = timedelta(milliseconds=500)

REMINDER_TEXTS = (
    "stand-up meeting",
    "call the pharmacy",
    "submit expense report",
    "water the plants",
    "review pull request",
    "pick up groceries",
    "book dentist appointment",
    "send weekly summary",
    "renew parking permit",
    "back up laptop",
    "pay electricity bill",
    "stretch break",
)


@dataclass(frozen=True)
class Scenario:
    n_reminders: int = 12
    mean_delay_sec: float = 97.0
    max_delay_sec: float = 180.0
    premature_toasts: bool = True
    mix_timestamp_formats: bool = True
    seed: int = 7
    post_fix: bool = False

    def __post_init__(self):
        if self.n_reminders < 0:
            raise ValueError("n_reminders must be non-negative")
        if self.mean_delay_sec < 0 or self.max_delay_sec < 0:
            raise ValueError("delays must be non-negative")
        if self.max_delay_sec < self.mean_delay_sec:
            raise ValueError("max_delay_sec must be >= mean_delay_sec")
        if self.post_fix and (self.premature_toasts or self.mean_delay_sec > 10):
            raise ValueError("post_fix scenarios are receipt-gated with mean delay <= 10s")


PRESETS = {
    "before": Scenario(12, 97.0, 180.0, premature_toasts=True, mix_timestamp_formats=True, seed=7),
    "after": Scenario(12, 8.0, 12.0, premature_toasts=False, mix_timestamp_formats=False, seed=7, post_fix=True),
}


def delays_for(s: Scenario) -> list[float]:
    """Seeded triangular spread, then pinned so mean and max hit the scenario exactly."""
    n = s.n_reminders
    if n == 0:
        return []
    m, top = s.mean_delay_sec, s.max_delay_sec
    if n == 1 or top == m:
        return [round(m, 1)] * n
    rng = random.Random(s.seed)
    low = max(0.0, 2 * m - top)
    raw = [rng.triangular(low, top, m) for _ in range(n)]
    mu, hi = statistics.fmean(raw), max(raw)
    k = (top - m) / (hi - mu) if hi > mu else 0.0
    xs = [m + (x - mu) * k for x in raw]
    peak = max(range(n), key=xs.__getitem__)
    xs[peak] = top
    floor = min(1.0, m)
    for _ in range(50):
        xs = [max(floor, x) if i != peak else x for i, x in enumerate(xs)]
        free = [i for i in range(n) if i != peak and xs[i] > floor]
        gap = n * m - sum(xs)
        if abs(gap) < 1e-9 or not free:
            break
        for i in free:
            xs[i] += gap / len(free)
    return [round(x, 1) for x in xs]


def build_events(s: Scenario, now: datetime) -> list[Event]:
    now = ensure_utc(now).replace(microsecond=0)
    delays = delays_for(s)
    n = len(delays)
    # every third delay rank reports "delay" so anxiety spans the whole delay range;
    # the longest delay is always a "fail"
    ranked = sorted(range(n), key=lambda i: (-delays[i], i))
    fail_idx = {i for r, i in enumerate(ranked) if r % 3 != 2}
    spacing = TRACE_SPAN / n if n else TRACE_SPAN
    out: list[Event] = []
    for i, d in enumerate(delays):
        t0 = now - TRACE_SPAN + spacing * i
        rid = f"r{i + 1:03d}"
        text = REMINDER_TEXTS[i % len(REMINDER_TEXTS)]
        due = format_iso(t0 + timedelta(minutes=30))
        lag = timedelta(seconds=d)
        out.append(Event(t0, "reminder.schedule", "info", {"reminder_id": rid, "text": text, "scheduled_utc": due}))
        if s.premature_toasts:
            status = "fail" if i in fail_idx else "delay"
            # short lags still get their toast strictly ahead of the receipt
            out.append(Event(t0 + min(TOAST_OFFSET, lag / 2), "reminder.toast", status,
                             {"reminder_id": rid, "delayed_by_sec": d, "scheduled_utc": due}))
            out.append(Event(t0 + lag, "reminder.receipt", "ok", {"reminder_id": rid, "receipt_lag_sec": d}))
        else:
            out.append(Event(t0 + lag, "reminder.receipt", "success",
                             {"reminder_id": rid, "receipt_lag_ms": int(round(d * 1000))}))
            out.append(Event(t0 + lag + POST_FIX_TOAST_OFFSET, "reminder.toast", "success",
                             {"reminder_id": rid, "delayed_by_sec": d, "scheduled_utc": due}))
    if s.mix_timestamp_formats:
        out = [Event(e.ts, e.kind, e.status, e.payload, ts_was_naive=bool(j % 2)) for j, e in enumerate(out)]
    return out


def generate_log(s: Scenario, out: str | os.PathLike, now: datetime) -> int:
    """Write a fresh trace to ``out``; returns the number of events."""
    out = Path(out)
    out.write_text("", encoding="utf-8")
    events = build_events(s, now)
    for e in events:
        append_event(out, e)
    return len(events)


@dataclass(frozen=True)
class TraceMetrics:
    reminders: int
    premature_toasts: int
    mean_latency_sec: float
    max_latency_sec: float
    frustration_events: int


def trace_metrics(events: Iterable[Event]) -> TraceMetrics:
    events = list(events)
    toasts: dict[str, Event] = {}
    receipts: dict[str, Event] = {}
    for e in events:
        rid = e.payload.get("reminder_id")
        if rid is None:
            continue
        if e.kind == "reminder.toast":
            toasts[rid] = e
        elif e.kind == "reminder.receipt":
            receipts[rid] = e
    premature = sum(1 for rid, t in toasts.items() if rid not in receipts or t.ts < receipts[rid].ts)
    lags = [d for d in (t.delay_sec() for t in toasts.values()) if d is not None]
    frustration = 0
    for e in events:
        a = appraise_event(e)
        if a is not None and a.emotion == "frustration":
            frustration += 1
    return TraceMetrics(
        reminders=len(toasts),
        premature_toasts=premature,
        mean_latency_sec=statistics.fmean(lags) if lags else 0.0,
        max_latency_sec=max(lags) if lags else 0.0,
        frustration_events=frustration,
    )


def log_metrics(path: str | os.PathLike) -> TraceMetrics:
    return trace_metrics(read_events(path))


DEFECTIVE_REPO = {
    "reminders.py": '''\
"""Reminder commands for the toy agent."""
from datetime import datetime, timedelta

import backend
from notifier import show_toast


def set_reminder(text, minutes):
    when = datetime.now() + timedelta(minutes=minutes)
    reminder_id = backend.schedule(text, when.strftime("%Y-%m-%d %H:%M"))
    show_toast(f"Reminder set: {text}")
    return reminder_id


def pending():
    return backend.list_pending()
''',
    "notifier.py": '''\
"""Toast output for the toy agent."""
from datetime import datetime


def show_toast(message):
    stamp = datetime.now().strftime("%H:%M:%S")
    print(f"[{stamp}] {message}")
''',
    "backend.py": '''\
"""In-memory stand-in for the reminder service."""
import itertools

_ids = itertools.count(1)
_pending = {}
_receipts = set()


def schedule(text, when):
    reminder_id = next(_ids)
    _pending[reminder_id] = (text, when)
    return reminder_id


def confirm(reminder_id):
    _receipts.add(reminder_id)


def has_receipt(reminder_id):
    return reminder_id in _receipts


def list_pending():
    return sorted(_pending.items())
''',
}

CLEAN_REPO = {
    "reminders.py": '''\
"""Reminder commands for the toy agent."""
from datetime import datetime, timedelta, timezone

import backend
from notifier import show_toast
from utils.reliability import call_with_retry, gate_success_on_receipt, to_utc_iso


def set_reminder(text, minutes):
    when = datetime.now(timezone.utc) + timedelta(minutes=minutes)
    reminder_id = call_with_retry(lambda: backend.schedule(text, to_utc_iso(when)))
    gate_success_on_receipt(lambda: backend.has_receipt(reminder_id), lambda: show_toast(f"Reminder set: {text}"))
    return reminder_id


def pending():
    return call_with_retry(backend.list_pending)
''',
    "notifier.py": '''\
"""Toast output for the toy agent."""
from datetime import datetime, timezone

from utils.reliability import to_utc_iso


def show_toast(message):
    stamp = to_utc_iso(datetime.now(timezone.utc))
    print(f"[{stamp}] {message}")
''',
    "backend.py": DEFECTIVE_REPO["backend.py"],
    "utils/reliability.py": PYTHON_RELIABILITY,
}


def generate_fixture_repo(root: str | os.PathLike, defective: bool = True) -> list[Path]:
    root = Path(root)
    if root.exists() and any(root.iterdir()):
        raise FileExistsError(f"refusing to write fixture into non-empty directory {root}")
    files = DEFECTIVE_REPO if defective else CLEAN_REPO
    written = []
    for rel, body in sorted(files.items()):
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(body, encoding="utf-8")
        written.append(path)
    return written


AGENT_PROMPT = """\
You are Robin-A, a reminder assistant that runs on the UTCP tool protocol.

BEGIN_CORE_IDENTITY
- You schedule reminders the user asks for and tell them when each one is set.
- You never claim an action happened unless a tool reported it.
- You are concise and polite.
END_CORE_IDENTITY

## BEGIN_ADAPTIVE_SECTION
(no adaptations yet)
## END_ADAPTIVE_SECTION

Tools available: schedule_reminder, list_reminders, show_toast.
"""


def write_agent_prompt(path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(AGENT_PROMPT, encoding="utf-8")
    return path


def simulate(preset_or_scenario: str | Scenario, root: str | os.PathLike, now: datetime) -> dict[str, Path]:
    """Lay out ``logs/events.jsonl``, ``repo/`` and ``prompt.txt`` under ``root``."""
    s = PRESETS[preset_or_scenario] if isinstance(preset_or_scenario, str) else preset_or_scenario
    root = Path(root)
    (root / "logs").mkdir(parents=True, exist_ok=True)
    log_path = root / "logs" / "events.jsonl"
    generate_log(s, log_path, now)
    generate_fixture_repo(root / "repo", defective=not s.post_fix)
    prompt = write_agent_prompt(root / "prompt.txt")
    return {"log": log_path, "repo": root / "repo", "prompt": prompt}

