"""Remediation strategies: scored against a diagnosis, they return file edits only."""
from __future__ import annotations

import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import PurePosixPath
from typing import Mapping, Sequence

from ..rbt import RbtDiagnosis
from .diffs import FileEdit
from .scanner import Hotspot, enclosing_span
from .templates import RELIABILITY_STEM, TEMPLATES

LANGUAGE_BY_SUFFIX = {".py": "python", ".js": "javascript", ".ts": "typescript", ".mjs": "javascript"}


@dataclass(frozen=True)
class RepoSnapshot:
    """Text files of the target repo keyed by posix relative path."""

    files: Mapping[str, str]

    def dominant_language(self) -> str:
        counts = Counter(LANGUAGE_BY_SUFFIX.get(PurePosixPath(p).suffix) for p in self.files)
        counts.pop(None, None)
        if not counts:
            return "python"
        return max(sorted(counts), key=counts.__getitem__)


def reliability_file(repo: RepoSnapshot) -> tuple[str, str, str]:
    """``(path, source, language)`` of the utility module, falling back to Python."""
    lang = repo.dominant_language()
    if lang not in TEMPLATES:
        lang = "python"
    suffix, source = TEMPLATES[lang]
    return RELIABILITY_STEM + suffix, source, lang


def _module_name(path: str) -> str:
    parts = list(PurePosixPath(path).with_suffix("").parts)
    if parts and parts[-1] == "__init__":
        parts.pop()
    return ".".join(parts)


RELIABILITY_MODULE = _module_name(RELIABILITY_STEM + ".py")


# -- small source-editing helpers ---------------------------------------------------


def call_end(line: str, open_paren: int) -> int | None:
    """Index just past the parenthesis matching ``line[open_paren]``; None if unclosed."""
    depth = 0
    quote: str | None = None
    i = open_paren
    while i < len(line):
        c = line[i]
        if quote:
            if c == "\\":
                i += 2
                continue
            if c == quote:
                quote = None
        elif c in "\"'":
            quote = c
        elif c == "(":
            depth += 1
        elif c == ")":
            depth -= 1
            if depth == 0:
                return i + 1
        i += 1
    return None


def call_start(line: str, name_start: int) -> int:
    """Extend left over a dotted qualifier such as ``self.client.``."""
    i = name_start
    while i > 0 and (line[i - 1].isalnum() or line[i - 1] in "_."):
        i -= 1
    return i


def wrap_calls(line: str, pattern: re.Pattern[str], wrap) -> str:
    """Rewrite every call matched by ``pattern`` on ``line`` via ``wrap(call_text)``."""
    out = []
    pos = 0
    for m in pattern.finditer(line):
        if m.start() < pos:
            continue
        start = call_start(line, m.start())
        paren = line.index("(", m.start())
        end = call_end(line, paren)
        if end is None:
            continue
        out.append(line[pos:start])
        out.append(wrap(line[start:end]))
        pos = end
    out.append(line[pos:])
    return "".join(out)


def receiver_start(line: str, end: int) -> int:
    """Start of the expression ending at ``line[end]`` (names, dots, call parens)."""
    i = end
    while i > 0:
        c = line[i - 1]
        if c == ")":
            depth, j = 0, i - 1
            while j >= 0:
                depth += {")": 1, "(": -1}.get(line[j], 0)
                if depth == 0:
                    break
                j -= 1
            if j < 0:
                break
            i = j
        elif c.isalnum() or c in "_.":
            i -= 1
        else:
            break
    return i


def replace_strftime(line: str) -> str:
    """``expr.strftime("...")`` -> ``to_utc_iso(expr)`` for each call on the line."""
    for m in reversed(list(_STRFTIME.finditer(line))):
        start = receiver_start(line, m.start())
        receiver = line[start:m.start()]
        if receiver and not receiver.startswith("."):
            line = line[:start] + f"to_utc_iso({receiver})" + line[m.end():]
    return line


def _top_level_import_end(lines: list[str]) -> int:
    """Index after the last top-level import statement (or after docstring/futures)."""
    last = None
    i = 0
    while i < len(lines):
        s = lines[i]
        if s.startswith(("import ", "from ")):
            j = i
            if "(" in s and ")" not in s:
                while j + 1 < len(lines) and ")" not in lines[j]:
                    j += 1
            last = j + 1
            i = j + 1
            continue
        i += 1
    if last is not None:
        return last
    i = 0
    if lines and lines[0].lstrip().startswith(('"""', "'''")):
        q = lines[0].lstrip()[:3]
        if lines[0].count(q) >= 2:
            i = 1
        else:
            i = 1
            while i < len(lines) and q not in lines[i]:
                i += 1
            i += 1
    return i


def add_imports(text: str, statements: Sequence[str]) -> str:
    lines = text.splitlines(keepends=True)
    existing = {ln.strip() for ln in lines}
    new = [s for s in statements if s not in existing]
    if not new:
        return text
    at = _top_level_import_end(lines)
    if at and not lines[at - 1].endswith("\n"):
        lines[at - 1] += "\n"
    return "".join(lines[:at] + [s + "\n" for s in new] + lines[at:])


_FROM_DATETIME = re.compile(r"^from datetime import (?P<names>[^()\n]+?)\s*$", re.MULTILINE)


def ensure_timezone_import(text: str) -> str:
    m = _FROM_DATETIME.search(text)
    if m:
        names = [n.strip() for n in m.group("names").split(",")]
        if "timezone" in names:
            return text
        return text[: m.start("names")] + m.group("names") + ", timezone" + text[m.end("names"):]
    return add_imports(text, ["from datetime import timezone"])


# -- strategies ---------------------------------------------------------------------


def _thorn_status(cause: str) -> str:
    return cause.rsplit(":", 1)[-1] if ":" in cause else ""


class Strategy:
    name = "strategy"

    def score(self, diagnosis: RbtDiagnosis, hotspots: Sequence[Hotspot]) -> float:
        raise NotImplementedError

    def transform(self, repo: RepoSnapshot, hotspots: Sequence[Hotspot], diagnosis: RbtDiagnosis) -> list[FileEdit]:
        raise NotImplementedError

    def rationale(self, diagnosis: RbtDiagnosis, hotspots: Sequence[Hotspot]) -> str:
        return ""

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


def _ensure_reliability(repo: RepoSnapshot) -> list[FileEdit]:
    path, source, _ = reliability_file(repo)
    if path in repo.files:
        return []
    return [FileEdit(path, None, source)]


def _by_file(hotspots: Sequence[Hotspot], ids: set[str]) -> dict[str, list[Hotspot]]:
    grouped: dict[str, list[Hotspot]] = defaultdict(list)
    for h in hotspots:
        if h.pattern_id in ids:
            grouped[h.file].append(h)
    return grouped


_ASSIGN = re.compile(r"^\s*([A-Za-z_]\w*)\s*=(?!=)")
_DEF_PARAMS = re.compile(r"^\s*(?:async\s+)?def\s+\w+\(\s*(?:self\s*,\s*)?([A-Za-z_]\w*)")
_RECEIPT_DEF = re.compile(r"^def\s+(\w*receipt\w*)\s*\(", re.MULTILINE)
_TOAST_CALL = re.compile(r"\b(?:show_toast|emit_toast|toast|notify)\(")
_NAIVE_QUALIFIED = re.compile(r"(?<![\w.])datetime\.datetime\.(?:now|utcnow)\(\s*\)")
_NAIVE = re.compile(r"(?<![\w.])datetime\.(?:now|utcnow)\(\s*\)")
_STRFTIME = re.compile(r"\.strftime\(\s*([\"'])(?:(?!\1).)*\1\s*\)")


@dataclass
class TZReceiptStrategy(Strategy):
    """UTC-aware timestamps plus receipt gating of success toasts."""

    name: str = "TZReceiptStrategy"
    cause_keywords: tuple[str, ...] = ("toast", "receipt", "notify")
    base_score: float = 3.0
    per_hotspot: float = 0.5
    handles: frozenset[str] = field(
        default_factory=lambda: frozenset({"naive_datetime", "ungated_toast", "mixed_timestamp_format"})
    )

    def score(self, diagnosis, hotspots):
        top = diagnosis.top_thorn or ""
        kind = top.rsplit(":", 1)[0]
        if not any(k in kind for k in self.cause_keywords):
            return 0.0
        if not any(h.pattern_id in ("naive_datetime", "ungated_toast") for h in hotspots):
            return 0.0
        n = sum(h.pattern_id in self.handles for h in hotspots)
        return self.base_score + self.per_hotspot * n

    def rationale(self, diagnosis, hotspots):
        return (
            f"The dominant thorn `{diagnosis.top_thorn}` points at success toasts emitted before the backend "
            "confirms the action, with timestamps of mixed zone handling. The patch routes toasts through "
            "`gate_success_on_receipt` and makes scheduling timestamps UTC-aware."
        )

    def _receipt_probe(self, repo: RepoSnapshot) -> tuple[str, str] | None:
        for path in sorted(repo.files):
            if not path.endswith(".py") or path.startswith(RELIABILITY_STEM):
                continue
            m = _RECEIPT_DEF.search(repo.files[path])
            if m:
                return _module_name(path), m.group(1)
        return None

    @staticmethod
    def _probe_ref(text: str, path: str, module: str, fn: str) -> tuple[str, list[str]]:
        if _module_name(path) == module:
            return fn, []
        if re.search(rf"^from {re.escape(module)} import [^\n]*\b{fn}\b", text, re.MULTILINE):
            return fn, []
        m = re.search(rf"^import {re.escape(module)} as (\w+)\s*$", text, re.MULTILINE)
        if m:
            return f"{m.group(1)}.{fn}", []
        if re.search(rf"^import {re.escape(module)}\s*$", text, re.MULTILINE):
            return f"{module}.{fn}", []
        return f"{module}.{fn}", [f"import {module}"]

    def transform(self, repo, hotspots, diagnosis):
        edits = _ensure_reliability(repo)
        probe = self._receipt_probe(repo)
        for path, spots in sorted(_by_file(hotspots, set(self.handles)).items()):
            if not path.endswith(".py"):
                continue
            text = repo.files[path]
            lines = text.splitlines(keepends=True)
            helpers: set[str] = set()
            imports: list[str] = []
            needs_tz = False
            for h in sorted(spots, key=lambda h: (h.line, h.pattern_id)):
                i = h.line - 1
                line = lines[i]
                if h.pattern_id == "naive_datetime":
                    new = _NAIVE_QUALIFIED.sub("datetime.datetime.now(datetime.timezone.utc)", line)
                    new2 = _NAIVE.sub("datetime.now(timezone.utc)", new)
                    needs_tz |= new2 != new
                    line = new2
                elif h.pattern_id == "mixed_timestamp_format":
                    new = replace_strftime(line)
                    if new != line:
                        helpers.add("to_utc_iso")
                    line = new
                elif h.pattern_id == "ungated_toast":
                    token = self._receipt_token(lines, i)
                    if probe is not None:
                        ref, extra = self._probe_ref(text, path, *probe)
                        imports += extra
                        check = f"{ref}({token})"
                    else:
                        check = f"{token} is not None"
                    line = wrap_calls(
                        line, _TOAST_CALL, lambda call: f"gate_success_on_receipt(lambda: {check}, lambda: {call})"
                    )
                    helpers.add("gate_success_on_receipt")
                lines[i] = line
            new_text = "".join(lines)
            if needs_tz:
                new_text = ensure_timezone_import(new_text)
            stmts = list(dict.fromkeys(imports))
            if helpers:
                stmts.append(f"from {RELIABILITY_MODULE} import {', '.join(sorted(helpers))}")
            new_text = add_imports(new_text, stmts)
            if new_text != text:
                edits.append(FileEdit(path, text, new_text))
        return edits

    @staticmethod
    def _receipt_token(lines: list[str], index: int) -> str:
        span = enclosing_span([ln.rstrip("\n") for ln in lines], index)
        for prev in reversed(span):
            m = _ASSIGN.match(prev)
            if m:
                return m.group(1)
        if span:
            m = _DEF_PARAMS.match(span[0])
            if m:
                return m.group(1)
        return "None"


_API_CALL = re.compile(r"\b(?:requests|httpx|session|client|backend|api)\.\w+\(|\burlopen\(|\bcall_tool\(")


@dataclass
class RetryErrorsStrategy(Strategy):
    """Wrap bare network/tool calls in a single jittered-backoff retry."""

    name: str = "RetryErrorsStrategy"
    base_score: float = 1.0
    per_hotspot: float = 0.5

    def score(self, diagnosis, hotspots):
        api = sum(h.pattern_id == "bare_api_call" for h in hotspots)
        failing = [t for t in diagnosis.thorns if _thorn_status(t.cause) in ("fail", "error")]
        if not api or not failing:
            return 0.0
        return self.base_score + self.per_hotspot * api

    def rationale(self, diagnosis, hotspots):
        return (
            "Failing and erroring tool calls recur in the diagnosis while the code calls remote services "
            "without any retry. The patch wraps each bare call in `call_with_retry` (one retry, full-jitter "
            "exponential backoff)."
        )

    def transform(self, repo, hotspots, diagnosis):
        edits = _ensure_reliability(repo)
        for path, spots in sorted(_by_file(hotspots, {"bare_api_call"}).items()):
            if not path.endswith(".py"):
                continue
            text = repo.files[path]
            lines = text.splitlines(keepends=True)
            for h in spots:
                i = h.line - 1
                lines[i] = wrap_calls(lines[i], _API_CALL, lambda call: f"call_with_retry(lambda: {call})")
            new_text = add_imports("".join(lines), [f"from {RELIABILITY_MODULE} import call_with_retry"])
            if new_text != text:
                edits.append(FileEdit(path, text, new_text))
        return edits


def default_registry() -> list[Strategy]:
    return [TZReceiptStrategy(), RetryErrorsStrategy()]
