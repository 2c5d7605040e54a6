"""Roses / Buds / Thorns diagnosis, fallback diagnosis, and internal-failure capture."""
from __future__ import annotations

import enum
import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Iterable, Mapping, Sequence

from .appraisal import NEGATIVE_EMOTIONS, POSITIVE_EMOTIONS
from .emobank import DEFAULT_HALF_LIFE_HOURS, EmoBank, EmoSnapshot, decayed_intensity
from .events import Event
from .timeutil import ensure_utc, format_iso, parse_iso

ROSE_MIN_INTENSITY = 0.5
BUD_MIN_VALENCE = 0.2
CURIOSITY_BUD_MIN_INTENSITY = 0.3
THORN_MIN_INTENSITY = 0.4


class Category(str, enum.Enum):
    ROSE = "rose"
    BUD = "bud"
    THORN = "thorn"


def classify(emotion: str, valence: float, intensity: float) -> Category | None:
    if emotion in POSITIVE_EMOTIONS and intensity >= ROSE_MIN_INTENSITY:
        return Category.ROSE
    if (emotion in POSITIVE_EMOTIONS and valence >= BUD_MIN_VALENCE) or (
        emotion == "curiosity" and intensity >= CURIOSITY_BUD_MIN_INTENSITY
    ):
        return Category.BUD
    if emotion in NEGATIVE_EMOTIONS and intensity >= THORN_MIN_INTENSITY:
        return Category.THORN
    return None


RELIABILITY_RULES = (
    "Gate every success toast on a confirmed backend receipt; never announce success before the receipt arrives.",
    "Log receipt_lag_ms for each reminder so delivery delay stays observable.",
    "Normalize every timestamp to UTC and format it as ISO-8601 before logging or scheduling.",
    "Retry a failed tool call once, using jittered exponential backoff.",
    "If a tool call fails again, emit a structured error toast carrying a stable reason code.",
)

PROMPT_RULES: dict[str, tuple[str, ...]] = {
    "reminder.toast:fail": RELIABILITY_RULES,
    "reminder.toast:delay": RELIABILITY_RULES,
}


def rules_for(cause: str, table: Mapping[str, Sequence[str]] = PROMPT_RULES) -> tuple[str, ...]:
    if cause in table:
        return tuple(table[cause])
    return (f"Investigate recurring {cause} events and add a guard for the failure they signal.",)


@dataclass(frozen=True)
class RbtItem:
    cause: str
    emotion: str
    score: float
    evidence: tuple[int, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {"cause": self.cause, "emotion": self.emotion, "score": self.score, "evidence": list(self.evidence)}


@dataclass(frozen=True)
class RbtDiagnosis:
    roses: tuple[RbtItem, ...]
    buds: tuple[RbtItem, ...]
    thorns: tuple[RbtItem, ...]
    top_thorn: str | None
    prompt_rules_to_add: tuple[str, ...]
    fallback: bool
    as_of: datetime
    events_considered: int = 0

    @property
    def is_stable(self) -> bool:
        return not self.prompt_rules_to_add

    def to_dict(self) -> dict[str, Any]:
        return {
            "as_of": format_iso(self.as_of),
            "fallback": self.fallback,
            "top_thorn": self.top_thorn,
            "roses": [i.to_dict() for i in self.roses],
            "buds": [i.to_dict() for i in self.buds],
            "thorns": [i.to_dict() for i in self.thorns],
            "prompt_rules_to_add": list(self.prompt_rules_to_add),
            "events_considered": self.events_considered,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RbtDiagnosis":
        def items(key):
            return tuple(
                RbtItem(i["cause"], i["emotion"], float(i["score"]), tuple(i.get("evidence", ())))
                for i in d.get(key, ())
            )

        as_of, _ = parse_iso(d["as_of"])
        return cls(
            roses=items("roses"),
            buds=items("buds"),
            thorns=items("thorns"),
            top_thorn=d.get("top_thorn"),
            prompt_rules_to_add=tuple(d.get("prompt_rules_to_add", ())),
            fallback=bool(d.get("fallback", False)),
            as_of=as_of,
            events_considered=int(d.get("events_considered", 0)),
        )


def _assemble(
    groups: Iterable[tuple[Category, RbtItem]],
    as_of: datetime,
    fallback: bool,
    rule_table: Mapping[str, Sequence[str]],
    events_considered: int = 0,
) -> RbtDiagnosis:
    buckets: dict[Category, list[RbtItem]] = defaultdict(list)
    for cat, item in groups:
        buckets[cat].append(item)
    for items in buckets.values():
        items.sort(key=lambda i: (-i.score, i.cause, i.emotion))
    thorns = buckets[Category.THORN]
    rules: list[str] = []
    for t in thorns:
        for r in rules_for(t.cause, rule_table):
            if r not in rules:
                rules.append(r)
    return RbtDiagnosis(
        roses=tuple(buckets[Category.ROSE]),
        buds=tuple(buckets[Category.BUD]),
        thorns=tuple(thorns),
        top_thorn=thorns[0].cause if thorns else None,
        prompt_rules_to_add=tuple(rules),
        fallback=fallback,
        as_of=ensure_utc(as_of),
        events_considered=events_considered,
    )


_RANK = {Category.THORN: 3, Category.ROSE: 2, Category.BUD: 1}


def diagnose(
    bank: EmoBank,
    events: Sequence[Event],
    now: datetime,
    half_life_hours: float = DEFAULT_HALF_LIFE_HOURS,
    window_hours: float = 24.0,
    rule_table: Mapping[str, Sequence[str]] = PROMPT_RULES,
) -> RbtDiagnosis:
    """Classify in-window logical entries at decayed intensity and group by (cause, emotion).

    A group lands in the strongest category any of its members reaches;
    its score is the decayed mass of the whole group.
    """
    groups: dict[tuple[str, str], list[tuple[int, float, Category | None]]] = defaultdict(list)
    for le in bank.window(now, window_hours):
        d = decayed_intensity(le, now, half_life_hours)
        groups[(le.cause, le.emotion)].append((le.entry_id, d, classify(le.emotion, le.valence, d)))

    classified = []
    for (cause, emotion), members in groups.items():
        cats = [c for _, _, c in members if c is not None]
        if not cats:
            continue
        cat = max(cats, key=_RANK.__getitem__)
        score = sum(d for _, d, _ in members)
        evidence = tuple(i for i, _, _ in members)
        classified.append((cat, RbtItem(cause, emotion, score, evidence)))
    return _assemble(classified, now, False, rule_table, len(events))


# Valence carried by a dominant emotion when only the snapshot is available.
SNAPSHOT_VALENCE = {
    "frustration": -1.0,
    "anxiety": -0.6,
    "relief": 0.6,
    "pride": 0.6,
    "joy": 0.6,
    "gratitude": 0.6,
    "calm": 0.6,
    "curiosity": 0.2,
    "determination": 0.4,
}


def fallback_diagnose(
    snapshot: EmoSnapshot | None,
    cue: str | None,
    rule_table: Mapping[str, Sequence[str]] = PROMPT_RULES,
) -> RbtDiagnosis:
    """Diagnosis from a cached snapshot and cue alone. Never raises."""
    try:
        as_of = snapshot.as_of if snapshot is not None else None
        groups = []
        for emotion, mass in (snapshot.dominant_emotions if snapshot is not None else ()):
            level = min(1.0, max(0.0, float(mass)))
            cat = classify(emotion, SNAPSHOT_VALENCE.get(emotion, 0.0), level)
            if cat is None:
                continue
            # summed snapshot mass cannot vouch for a stable win, so cap at bud
            if cat is Category.ROSE:
                cat = Category.BUD
            if emotion in NEGATIVE_EMOTIONS and cue:
                cause = cue
            else:
                cause = f"snapshot:{emotion}"
            groups.append((cat, RbtItem(cause, emotion, level)))
        return _assemble(groups, as_of or _epoch(), True, rule_table)
    except Exception:  # noqa: BLE001 - the fallback path is the last resort
        return RbtDiagnosis((), (), (), None, (), True, _epoch())


def _epoch() -> datetime:
    return parse_iso("1970-01-01T00:00:00Z")[0]


@dataclass(frozen=True)
class InternalThorn:
    type: str
    tool: str
    file: str | None
    excerpt: str
    suggestions: tuple[str, ...]
    trace: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": self.type,
            "tool": self.tool,
            "file": self.file,
            "excerpt": self.excerpt,
            "suggestions": list(self.suggestions),
            "trace": self.trace,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "InternalThorn":
        return cls(d["type"], d["tool"], d.get("file"), d["excerpt"], tuple(d["suggestions"]), d["trace"])


@dataclass(frozen=True)
class FailureSignature:
    type: str
    pattern: re.Pattern[str]
    suggestions: tuple[str, ...] = field(default_factory=tuple)

    def render(self, m: re.Match[str], tool: str) -> tuple[str, ...]:
        values = {"tool": tool, **{k: v or "?" for k, v in m.groupdict().items()}}
        return tuple(s.format(**values) for s in self.suggestions)


SIGNATURES: tuple[FailureSignature, ...] = (
    FailureSignature(
        "internal.schema_conflict",
        re.compile(r"(?P<func>[\w.<>]+)\(\) got multiple values for (?:keyword )?argument '(?P<arg>\w+)'"),
        (
            "Call site: drop the redundant '{arg}' keyword where {tool} calls {func}(), "
            "since the value is already passed positionally.",
            "Callee: change the signature of {func}() so '{arg}' is keyword-only with a default value, "
            "letting callers pass it one way only.",
        ),
    ),
    FailureSignature(
        "internal.schema_conflict",
        re.compile(r"(?P<func>[\w.<>]+)\(\) got an unexpected keyword argument '(?P<arg>\w+)'"),
        (
            "Call site: stop passing '{arg}' to {func}() from {tool}.",
            "Callee: add an '{arg}' parameter to {func}() if the caller's contract is the intended one.",
        ),
    ),
    FailureSignature(
        "internal.schema_conflict",
        re.compile(r"(?P<func>[\w.<>]+)\(\) missing \d+ required (?:positional|keyword-only) arguments?: (?P<arg>.+)$",
                   re.MULTILINE),
        (
            "Call site: pass {arg} when {tool} calls {func}().",
            "Callee: give {arg} a default value in {func}().",
        ),
    ),
)

_SOURCE_LINE = re.compile(r'File "(?P<file>[^"]+)", line \d+')


def capture_internal_failure(
    tool: str, trace: str, signatures: Sequence[FailureSignature] = SIGNATURES
) -> InternalThorn:
    """Turn a captured traceback into a structured internal thorn."""
    files = _SOURCE_LINE.findall(trace)
    source = files[-1] if files else None
    lines = trace.splitlines()
    for sig in signatures:
        m = sig.pattern.search(trace)
        if m is None:
            continue
        excerpt = next((ln.strip() for ln in lines if m.group(0) in ln), m.group(0))
        return InternalThorn(sig.type, tool, source, excerpt, sig.render(m, tool), trace)
    excerpt = next((ln.strip() for ln in reversed(lines) if ln.strip()), trace)
    return InternalThorn(
        "internal.tool_failure",
        tool,
        source,
        excerpt,
        (f"Inspect the captured trace for {tool}; no known failure signature matched.",),
        trace,
    )
