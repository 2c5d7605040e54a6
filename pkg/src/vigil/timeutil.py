"""UTC timestamp helpers shared by every module."""
from __future__ import annotations

import re
from datetime import datetime, timedelta, timezone

_FRACTION = re.compile(r"(\.\d+)")


def parse_iso(text: str) -> tuple[datetime, bool]:
    """Parse an ISO-8601 string into an aware UTC datetime.

    Returns ``(ts, was_naive)``. Zone-less input is read as UTC.
    Raises ``ValueError`` when the string is not a timestamp.
    """
    s = text.strip()
    if not s:
        raise ValueError("empty timestamp")
    if s[-1] in "Zz":
        s = s[:-1] + "+00:00"
    # fromisoformat on 3.10 only accepts 3 or 6 fractional digits
    m = _FRACTION.search(s)
    if m:
        digits = m.group(1)[1:]
        s = s[: m.start()] + "." + digits[:6].ljust(6, "0") + s[m.end():]
    ts = datetime.fromisoformat(s)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc), True
    return ts.astimezone(timezone.utc), False


def ensure_utc(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_iso(ts: datetime, naive: bool = False) -> str:
    ts = ensure_utc(ts)
    if naive:
        return ts.replace(tzinfo=None).isoformat()
    return ts.isoformat().replace("+00:00", "Z")


def compact(ts: datetime) -> str:
    """``YYYYMMDDTHHMMSSZ``, the artifact naming stamp."""
    return ensure_utc(ts).strftime("%Y%m%dT%H%M%SZ")


def hours_between(earlier: datetime, later: datetime) -> float:
    return (later - earlier) / timedelta(hours=1)


def utcnow() -> datetime:
    return datetime.now(timezone.utc)
