"""Regex hotspot scanner over a target repository (read-only)."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

log = logging.getLogger(__name__)

DEFAULT_IGNORE_DIRS = frozenset(
    {".git", ".hg", ".svn", "__pycache__", "node_modules", ".venv", "venv", ".tox", "build", "dist", "output"}
)
SOURCE_SUFFIXES = frozenset({".py", ".js", ".mjs", ".cjs", ".ts", ".jsx", ".tsx"})

_DEF_LINE = re.compile(r"^\s*(?:async\s+def|def|class|function)\b")
_BLOCK_OPENER = re.compile(r"^\s*(?:async\s+def|def|class|function)\b|^\s*(?:export\s+)?(?:async\s+)?function\b")
_COMMENT = re.compile(r"^\s*(?:#|//)")


@dataclass(frozen=True)
class Hotspot:
    file: str
    line: int
    pattern_id: str
    excerpt: str


@dataclass(frozen=True)
class PatternRule:
    """A line regex plus optional suppressors.

    ``unless_on_line`` silences a match when the same line matches it;
    ``unless_before`` silences it when an earlier line of the enclosing
    indentation block does.
    """

    id: str
    pattern: re.Pattern[str]
    unless_on_line: re.Pattern[str] | None = None
    unless_before: re.Pattern[str] | None = None

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PatternRule":
        def rx(key):
            return re.compile(d[key]) if d.get(key) else None

        return cls(d["id"], re.compile(d["regex"]), rx("unless_on_line"), rx("unless_before"))


DEFAULT_RULES: tuple[PatternRule, ...] = (
    PatternRule(
        "naive_datetime",
        re.compile(r"\b(?:datetime\.)*(?:now|utcnow)\(\s*\)"),
    ),
    PatternRule(
        "ungated_toast",
        re.compile(r"\b(?:show_toast|emit_toast|toast|notify)\("),
        unless_on_line=re.compile(r"receipt", re.IGNORECASE),
        unless_before=re.compile(r"receipt", re.IGNORECASE),
    ),
    PatternRule(
        "bare_api_call",
        re.compile(r"\b(?:requests|httpx|session|client|backend|api)\.\w+\(|\burlopen\(|\bcall_tool\("),
        unless_on_line=re.compile(r"retry|wait_for_receipt|gate_success_on_receipt"),
        unless_before=re.compile(r"@\w*retry|\bretry\b|for attempt in"),
    ),
    PatternRule(
        "mixed_timestamp_format",
        re.compile(r"\.strftime\(\s*([\"'])(?:(?!\1).)*\1\s*\)"),
        unless_on_line=re.compile(r"%z|%Z|Z[\"']"),
    ),
)


def load_rules(path: str | os.PathLike) -> tuple[PatternRule, ...]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict):
        data = data.get("patterns", [])
    return tuple(PatternRule.from_dict(d) for d in data)


class ScanResult(list):
    """Hotspots in (file, line) order, plus the count of unreadable files."""

    def __init__(self, hotspots=(), skipped: int = 0):
        super().__init__(hotspots)
        self.skipped = skipped


def _indent(line: str) -> int:
    return len(line) - len(line.lstrip(" \t"))


def enclosing_span(lines: Sequence[str], index: int) -> list[str]:
    """Lines from the enclosing def/function header up to (excluding) ``lines[index]``.

    Indentation approximates scope; module-level code has no enclosing span.
    """
    depth = _indent(lines[index])
    if depth == 0:
        return []
    for j in range(index - 1, -1, -1):
        text = lines[j]
        if not text.strip():
            continue
        if _indent(text) < depth and _BLOCK_OPENER.match(text):
            return list(lines[j:index])
        if _indent(text) == 0:
            return list(lines[j:index])
    return list(lines[:index])


def scan_text(rel: str, text: str, rules: Sequence[PatternRule] = DEFAULT_RULES) -> list[Hotspot]:
    lines = text.splitlines()
    found: list[Hotspot] = []
    for i, line in enumerate(lines):
        if _COMMENT.match(line) or not line.strip():
            continue
        for rule in rules:
            if not rule.pattern.search(line):
                continue
            if rule.id == "ungated_toast" and _DEF_LINE.match(line):
                continue
            if rule.unless_on_line is not None and rule.unless_on_line.search(line):
                continue
            if rule.unless_before is not None and any(
                rule.unless_before.search(prev) for prev in enclosing_span(lines, i)
            ):
                continue
            found.append(Hotspot(rel, i + 1, rule.id, line))
    return found


def iter_source_files(
    root: Path,
    ignore_dirs: Iterable[str] = DEFAULT_IGNORE_DIRS,
    suffixes: Iterable[str] = SOURCE_SUFFIXES,
) -> list[Path]:
    ignore = set(ignore_dirs)
    suffixes = set(suffixes)
    out: list[Path] = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = sorted(d for d in dirnames if d not in ignore)
        for name in sorted(filenames):
            p = Path(dirpath) / name
            if p.suffix in suffixes:
                out.append(p)
    return out


def read_text_file(path: Path) -> str | None:
    """Text of ``path``, or None when it looks binary."""
    raw = path.read_bytes()
    if b"\0" in raw[:8192]:
        return None
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        return None


def scan_hotspots(
    root: str | os.PathLike,
    rules: Sequence[PatternRule] = DEFAULT_RULES,
    ignore_dirs: Iterable[str] = DEFAULT_IGNORE_DIRS,
) -> ScanResult:
    root = Path(root)
    if not root.is_dir():
        raise NotADirectoryError(f"scan root is not a readable directory: {root}")
    hotspots: list[Hotspot] = []
    skipped = 0
    for path in iter_source_files(root, ignore_dirs):
        try:
            text = read_text_file(path)
        except OSError as exc:
            log.warning("cannot read %s: %s", path, exc)
            skipped += 1
            continue
        if text is None:
            continue
        hotspots.extend(scan_text(path.relative_to(root).as_posix(), text, rules))
    hotspots.sort(key=lambda h: (h.file, h.line, h.pattern_id))
    return ScanResult(hotspots, skipped)


def tree_hash(root: str | os.PathLike) -> str:
    """SHA-256 over every file path and its bytes under ``root``."""
    root = Path(root)
    h = hashlib.sha256()
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            p = Path(dirpath) / name
            h.update(p.relative_to(root).as_posix().encode("utf-8") + b"\0")
            h.update(p.read_bytes())
            h.update(b"\0")
    return h.hexdigest()
