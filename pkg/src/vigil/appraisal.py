"""Deterministic event -> emotion appraisal driven by an ordered rule table."""
from __future__ import annotations

import fnmatch
import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable

from .events import KNOWN_STATUSES, Event

EMOTIONS = (
    "frustration",
    "anxiety",
    "relief",
    "pride",
    "joy",
    "gratitude",
    "calm",
    "curiosity",
    "determination",
)
NEGATIVE_EMOTIONS = frozenset({"frustration", "anxiety"})
POSITIVE_EMOTIONS = frozenset({"relief", "pride", "joy", "gratitude", "calm"})


def episode_id(cause: str) -> str:
    """First 12 hex chars of SHA-256 over the UTF-8 cause string."""
    if not cause:
        raise ValueError("cause must be non-empty")
    return hashlib.sha256(cause.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class Appraisal:
    ts: datetime
    emotion: str
    valence: float
    intensity: float
    cause: str
    episode: str = ""

    def __post_init__(self):
        if self.emotion not in EMOTIONS:
            raise ValueError(f"unknown emotion {self.emotion!r}")
        if not -1.0 <= self.valence <= 1.0:
            raise ValueError(f"valence out of range: {self.valence}")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError(f"intensity out of range: {self.intensity}")
        if not self.episode:
            object.__setattr__(self, "episode", episode_id(self.cause))


@dataclass(frozen=True)
class AppraisalRule:
    """One row of the table.

    ``status`` and ``kind`` are match constraints (``None`` = any); ``kind``
    accepts shell-style globs. Intensity is ``intensity_base`` when the event
    carries no delay, otherwise ``max(floor, delay * intensity_per_sec)``, in
    both cases capped at ``cap``.
    """

    emotion: str
    valence: float
    intensity_base: float
    intensity_per_sec: float = 0.0
    floor: float = 0.0
    cap: float = 1.0
    status: frozenset[str] | None = None
    kind: str | None = None

    def matches(self, e: Event, status: str) -> bool:
        if self.status is not None and status not in self.status:
            return False
        if self.kind is not None and not fnmatch.fnmatchcase(e.kind, self.kind):
            return False
        return True

    def intensity(self, delay_sec: float | None) -> float:
        if delay_sec is None or self.intensity_per_sec == 0.0:
            value = self.intensity_base
        else:
            value = max(self.floor, delay_sec * self.intensity_per_sec)
        return min(self.cap, max(0.0, value))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AppraisalRule":
        matcher = d.get("matcher", {})
        if isinstance(matcher, str):
            matcher = {} if matcher == "*" else {"status": matcher}
        status = matcher.get("status")
        if isinstance(status, str):
            status = [status]
        rule = cls(
            emotion=d["emotion"],
            valence=float(d["valence"]),
            intensity_base=float(d.get("intensity_base", 0.0)),
            intensity_per_sec=float(d.get("intensity_per_sec", 0.0)),
            floor=float(d.get("floor", 0.0)),
            cap=float(d.get("cap", 1.0)),
            status=frozenset(status) if status is not None else None,
            kind=matcher.get("kind"),
        )
        if rule.emotion not in EMOTIONS:
            raise ValueError(f"unknown emotion {rule.emotion!r}")
        if not -1.0 <= rule.valence <= 1.0:
            raise ValueError(f"valence out of range in rule: {d}")
        if rule.intensity_per_sec < 0:
            raise ValueError("intensity_per_sec must be non-negative")
        return rule


# 180 s -> 0.9 fixes the delay slope at 1/200 per second.
DELAY_SLOPE = 1.0 / 200.0


@dataclass(frozen=True)
class AppraisalRuleTable:
    rules: tuple[AppraisalRule, ...] = field(default_factory=tuple)

    def first_match(self, e: Event) -> AppraisalRule | None:
        status = e.status if e.status in KNOWN_STATUSES else "info"
        for rule in self.rules:
            if rule.matches(e, status):
                return rule
        return None

    @classmethod
    def default(cls) -> "AppraisalRuleTable":
        return cls(
            (
                AppraisalRule("frustration", -1.0, 0.5, DELAY_SLOPE, status=frozenset({"fail"})),
                AppraisalRule("anxiety", -0.6, 0.2, DELAY_SLOPE, floor=0.2, status=frozenset({"delay"})),
                AppraisalRule("relief", 0.6, 0.3, status=frozenset({"success", "ok"})),
                AppraisalRule("frustration", -1.0, 0.7, status=frozenset({"error"})),
                AppraisalRule("curiosity", 0.2, 0.3),
            )
        )

    @classmethod
    def from_rules(cls, rows: Iterable[dict[str, Any]]) -> "AppraisalRuleTable":
        table = cls(tuple(AppraisalRule.from_dict(r) for r in rows))
        missing = [s for s in sorted(KNOWN_STATUSES) if not any(r.status is None or s in r.status for r in table.rules)]
        if missing:
            raise ValueError(f"rule table does not cover statuses: {', '.join(missing)}")
        return table

    @classmethod
    def load(cls, path: str | Path) -> "AppraisalRuleTable":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(data, dict):
            data = data["appraisal"]
        return cls.from_rules(data)


def appraise_event(e: Event, table: AppraisalRuleTable | None = None) -> Appraisal | None:
    """Map an event to an Appraisal; ``None`` when nothing fires or intensity is 0."""
    table = table or DEFAULT_TABLE
    rule = table.first_match(e)
    if rule is None:
        return None
    intensity = rule.intensity(e.delay_sec())
    if intensity == 0.0:
        return None
    return Appraisal(
        ts=e.ts,
        emotion=rule.emotion,
        valence=rule.valence,
        intensity=intensity,
        cause=e.cause,
    )


DEFAULT_TABLE = AppraisalRuleTable.default()
