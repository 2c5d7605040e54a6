"""EmoBank: append-only affective memory with read-time decay.

Rows are never rewritten. Coalescing appends an amplification row that points
at the logical entry it boosts (``coalesced_with``); readers fold those rows
back into their target when computing effective intensity.
"""
from __future__ import annotations

import enum
import json
import logging
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Mapping

from .appraisal import Appraisal, episode_id
from .timeutil import ensure_utc, format_iso, hours_between, parse_iso

log = logging.getLogger(__name__)

DEFAULT_HALF_LIFE_HOURS = 12.0
NOISE_FLOOR = 0.25
COALESCE_WINDOW = timedelta(minutes=5)
COALESCE_BOOST = 0.1
REBOUND_WINDOW = timedelta(minutes=10)
REBOUND_VALENCE = 0.4
REBOUND_STRONG_PRIOR = 0.6

# term -> weight; terms are emotions or composites computed earlier in the dict
COMPOSITE_WEIGHTS: dict[str, dict[str, float]] = {
    "stress": {"frustration": 0.7, "anxiety": 0.7},
    "energy": {"joy": 0.5, "pride": 0.5, "curiosity": 0.3, "determination": 0.4},
    "motivation": {"determination": 0.6, "curiosity": 0.4, "pride": 0.3},
    "focus": {"_base": 0.5, "calm": 0.5, "stress": -0.5},
}


class ClockSkewError(ValueError):
    """Raised when asked to decay an entry from the future."""


@dataclass(frozen=True)
class BankEntry:
    ts: datetime
    emotion: str
    valence: float
    intensity: float
    cause: str
    episode: str
    entry_id: int
    coalesced_with: int | None = None
    synthetic: bool = False

    def to_json(self) -> str:
        row: dict[str, Any] = {
            "ts": format_iso(self.ts),
            "emotion": self.emotion,
            "intensity": self.intensity,
            "valence": self.valence,
            "cause": self.cause,
            "episode": self.episode,
            "entry_id": self.entry_id,
        }
        if self.coalesced_with is not None:
            row["coalesced_with"] = self.coalesced_with
        if self.synthetic:
            row["synthetic"] = True
        return json.dumps(row)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BankEntry":
        ts, _ = parse_iso(d["ts"])
        return cls(
            ts=ts,
            emotion=d["emotion"],
            valence=float(d["valence"]),
            intensity=float(d["intensity"]),
            cause=d["cause"],
            episode=d.get("episode") or episode_id(d["cause"]),
            entry_id=int(d["entry_id"]),
            coalesced_with=d.get("coalesced_with"),
            synthetic=bool(d.get("synthetic", False)),
        )


@dataclass(frozen=True)
class LogicalEntry:
    """A stored row together with the amplification rows that target it."""

    entry: BankEntry
    boosts: tuple[int, ...] = ()

    @property
    def ts(self) -> datetime:
        return self.entry.ts

    @property
    def entry_id(self) -> int:
        return self.entry.entry_id

    @property
    def emotion(self) -> str:
        return self.entry.emotion

    @property
    def cause(self) -> str:
        return self.entry.cause

    @property
    def valence(self) -> float:
        return self.entry.valence

    @property
    def intensity(self) -> float:
        return self.entry.intensity

    @property
    def effective_intensity(self) -> float:
        return effective_intensity(self.entry.intensity, len(self.boosts))


def effective_intensity(raw: float, n_boosts: int) -> float:
    return min(1.0, raw + COALESCE_BOOST * n_boosts)


def decayed_intensity(
    entry: BankEntry | LogicalEntry,
    now: datetime,
    half_life_hours: float = DEFAULT_HALF_LIFE_HOURS,
) -> float:
    """Effective intensity scaled by ``0.5 ** (elapsed_hours / half_life_hours)``.

    A bare ``BankEntry`` has no boosts; pass the ``LogicalEntry`` to include them.
    """
    if half_life_hours <= 0:
        raise ValueError("half_life_hours must be positive")
    now = ensure_utc(now)
    if now < entry.ts:
        raise ClockSkewError(f"now {format_iso(now)} precedes entry ts {format_iso(entry.ts)}")
    base = entry.effective_intensity if isinstance(entry, LogicalEntry) else entry.intensity
    elapsed = hours_between(entry.ts, now)
    return base * 0.5 ** (elapsed / half_life_hours)


class DepositKind(str, enum.Enum):
    STORED = "stored"
    DISCARDED_NOISE = "discarded_noise"
    COALESCED = "coalesced"
    STORED_WITH_REBOUND = "stored_with_rebound"


@dataclass(frozen=True)
class DepositOutcome:
    kind: DepositKind
    prior_id: int | None = None
    entry_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class EmoSnapshot:
    mood: str
    dominant_emotions: tuple[tuple[str, float], ...]
    energy: float
    stress: float
    motivation: float
    focus: float
    as_of: datetime
    half_life_hours: float = DEFAULT_HALF_LIFE_HOURS

    @classmethod
    def neutral(cls, as_of: datetime, half_life_hours: float = DEFAULT_HALF_LIFE_HOURS) -> "EmoSnapshot":
        return cls("neutral", (), 0.0, 0.0, 0.0, 0.5, ensure_utc(as_of), half_life_hours)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["as_of"] = format_iso(self.as_of)
        d["dominant_emotions"] = [list(p) for p in self.dominant_emotions]
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EmoSnapshot":
        as_of, _ = parse_iso(d["as_of"])
        return cls(
            mood=d["mood"],
            dominant_emotions=tuple((str(e), float(v)) for e, v in d["dominant_emotions"]),
            energy=float(d["energy"]),
            stress=float(d["stress"]),
            motivation=float(d["motivation"]),
            focus=float(d["focus"]),
            as_of=as_of,
            half_life_hours=float(d.get("half_life_hours", DEFAULT_HALF_LIFE_HOURS)),
        )


def _sign(x: float) -> int:
    return (x > 0) - (x < 0)


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def composite_signals(weights_by_emotion: Mapping[str, float],
                      table: Mapping[str, Mapping[str, float]] = COMPOSITE_WEIGHTS) -> dict[str, float]:
    """Evaluate the composite table; ``weights_by_emotion`` holds ``min(1, mass)`` per emotion."""
    out: dict[str, float] = {}
    for name, terms in table.items():
        total = terms.get("_base", 0.0)
        for term, weight in terms.items():
            if term == "_base":
                continue
            total += weight * (out[term] if term in out else weights_by_emotion.get(term, 0.0))
        out[name] = _clamp01(total)
    return out


@dataclass
class EmoBank:
    """Handle on one bank file. Single writer; readers may be many."""

    path: Path
    composites: Mapping[str, Mapping[str, float]] = field(default_factory=lambda: COMPOSITE_WEIGHTS)

    def __post_init__(self):
        self.path = Path(self.path)
        self._rows: list[BankEntry] = self._read_rows()
        # head entry_id -> (raw intensity, boost count), maintained on deposit
        self._tracked: dict[int, tuple[float, int]] = {}
        for le in self.logical_entries():
            self._tracked[le.entry_id] = (le.intensity, len(le.boosts))

    def _read_rows(self) -> list[BankEntry]:
        rows: list[BankEntry] = []
        if not self.path.exists():
            return rows
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rows.append(BankEntry.from_dict(json.loads(line)))
                except (ValueError, KeyError, TypeError) as exc:
                    # a torn final line from an interrupted append is expected
                    log.warning("%s:%d unreadable bank row skipped (%s)", self.path, lineno, exc)
        return rows

    @property
    def rows(self) -> tuple[BankEntry, ...]:
        return tuple(self._rows)

    def logical_entries(self) -> list[LogicalEntry]:
        by_id = {r.entry_id: r for r in self._rows}
        boosts: dict[int, list[int]] = defaultdict(list)
        heads: list[BankEntry] = []
        for row in self._rows:
            root = self._root_of(row, by_id)
            if root is None:
                heads.append(row)
            else:
                boosts[root].append(row.entry_id)
        return [LogicalEntry(h, tuple(boosts.get(h.entry_id, ()))) for h in heads]

    @staticmethod
    def _root_of(row: BankEntry, by_id: Mapping[int, BankEntry]) -> int | None:
        target = row.coalesced_with
        if target is None:
            return None
        seen = {row.entry_id}
        while True:
            parent = by_id.get(target)
            if parent is None or target in seen or target >= row.entry_id:
                log.warning("bank row %d has a dangling coalesced_with=%s", row.entry_id, row.coalesced_with)
                return None
            if parent.coalesced_with is None:
                return target
            seen.add(target)
            target = parent.coalesced_with

    def tracked_intensities(self) -> dict[int, float]:
        """Effective intensities as maintained incrementally by ``deposit``."""
        return {i: effective_intensity(raw, n) for i, (raw, n) in self._tracked.items()}

    def _next_id(self) -> int:
        return self._rows[-1].entry_id + 1 if self._rows else 1

    def _append(self, rows: list[BankEntry]) -> None:
        prefix = b""
        if self.path.exists() and self.path.stat().st_size:
            with open(self.path, "rb") as fh:
                fh.seek(-1, os.SEEK_END)
                if fh.read(1) != b"\n":
                    prefix = b"\n"
        with open(self.path, "ab") as fh:
            for i, row in enumerate(rows):
                fh.write((prefix if i == 0 else b"") + row.to_json().encode("utf-8") + b"\n")
                fh.flush()
                self._rows.append(row)

    def _row_from(self, a: Appraisal, entry_id: int, **extra) -> BankEntry:
        return BankEntry(
            ts=a.ts,
            emotion=a.emotion,
            valence=a.valence,
            intensity=a.intensity,
            cause=a.cause,
            episode=a.episode,
            entry_id=entry_id,
            **extra,
        )

    def deposit(self, a: Appraisal, now: datetime | None = None) -> DepositOutcome:
        if now is not None and ensure_utc(now) < a.ts:
            raise ClockSkewError("appraisal is newer than the deposit clock")
        prior = self._rows[-1] if self._rows else None

        if a.intensity < NOISE_FLOOR:
            same = next((r for r in reversed(self._rows) if r.cause == a.cause), None)
            if same is None or _sign(same.valence) == _sign(a.valence):
                return DepositOutcome(DepositKind.DISCARDED_NOISE)

        if (
            prior is not None
            and prior.emotion == a.emotion
            and prior.cause == a.cause
            and timedelta(0) <= a.ts - prior.ts <= COALESCE_WINDOW
        ):
            root = prior.entry_id
            if prior.coalesced_with is not None:
                root = self._root_of(prior, {r.entry_id: r for r in self._rows}) or prior.entry_id
            row = self._row_from(a, self._next_id(), coalesced_with=root)
            self._append([row])
            raw, n = self._tracked[root]
            self._tracked[root] = (raw, n + 1)
            return DepositOutcome(DepositKind.COALESCED, prior_id=root, entry_ids=(row.entry_id,))

        row = self._row_from(a, self._next_id())
        self._append([row])
        self._tracked[row.entry_id] = (row.intensity, 0)

        if (
            a.valence > 0
            and prior is not None
            and prior.valence < 0
            and timedelta(0) <= a.ts - prior.ts <= REBOUND_WINDOW
        ):
            shadow = BankEntry(
                ts=a.ts,
                emotion="determination",
                valence=REBOUND_VALENCE,
                intensity=0.4 if prior.intensity >= REBOUND_STRONG_PRIOR else 0.3,
                cause=a.cause,
                episode=a.episode,
                entry_id=self._next_id(),
                synthetic=True,
            )
            self._append([shadow])
            self._tracked[shadow.entry_id] = (shadow.intensity, 0)
            return DepositOutcome(DepositKind.STORED_WITH_REBOUND, entry_ids=(row.entry_id, shadow.entry_id))
        return DepositOutcome(DepositKind.STORED, entry_ids=(row.entry_id,))

    def window(self, now: datetime, window_hours: float) -> list[LogicalEntry]:
        now = ensure_utc(now)
        start = now - timedelta(hours=window_hours)
        return [le for le in self.logical_entries() if start <= le.ts <= now]

    def emotion_masses(
        self, now: datetime, window_hours: float = 24.0, half_life_hours: float = DEFAULT_HALF_LIFE_HOURS
    ) -> list[tuple[str, float]]:
        """Per-emotion decayed mass, strongest first; ties go to the most recent entry."""
        mass: dict[str, float] = defaultdict(float)
        latest: dict[str, tuple[datetime, int]] = {}
        for le in self.window(now, window_hours):
            mass[le.emotion] += decayed_intensity(le, now, half_life_hours)
            key = (le.ts, le.entry_id)
            if le.emotion not in latest or key > latest[le.emotion]:
                latest[le.emotion] = key
        order = sorted(mass, key=lambda e: (mass[e], latest[e]), reverse=True)
        return [(e, mass[e]) for e in order]

    def snapshot(
        self,
        now: datetime,
        window_hours: float = 24.0,
        half_life_hours: float = DEFAULT_HALF_LIFE_HOURS,
    ) -> EmoSnapshot:
        masses = self.emotion_masses(now, window_hours, half_life_hours)
        if not masses:
            return EmoSnapshot.neutral(now, half_life_hours)
        w = {e: min(1.0, m) for e, m in masses}
        sig = composite_signals(w, self.composites)
        return EmoSnapshot(
            mood=masses[0][0],
            dominant_emotions=tuple(masses[:3]),
            energy=sig.get("energy", 0.0),
            stress=sig.get("stress", 0.0),
            motivation=sig.get("motivation", 0.0),
            focus=sig.get("focus", 0.5),
            as_of=ensure_utc(now),
            half_life_hours=half_life_hours,
        )

    def top_cause(
        self, now: datetime, window_hours: float = 24.0, half_life_hours: float = DEFAULT_HALF_LIFE_HOURS
    ) -> str | None:
        """Cause with the largest decayed mass, preferring negative-valence causes."""
        mass: dict[tuple[bool, str], float] = defaultdict(float)
        for le in self.window(now, window_hours):
            mass[(le.valence < 0, le.cause)] += decayed_intensity(le, now, half_life_hours)
        if not mass:
            return None
        best = max(mass, key=lambda k: (k[0], mass[k], k[1]))
        return best[1]


def deposit_all(bank: EmoBank, appraisals, now: datetime | None = None) -> list[DepositOutcome]:
    return [bank.deposit(a, now) for a in appraisals]


__all__ = [
    "BankEntry",
    "ClockSkewError",
    "DepositKind",
    "DepositOutcome",
    "EmoBank",
    "EmoSnapshot",
    "LogicalEntry",
    "composite_signals",
    "decayed_intensity",
    "deposit_all",
]
