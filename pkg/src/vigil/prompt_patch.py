"""Rewrite the adaptive section of an agent prompt without touching its core identity."""
from __future__ import annotations

import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .rbt import RbtDiagnosis
from .timeutil import format_iso

ADAPTIVE_BEGIN = "## BEGIN_ADAPTIVE_SECTION"
ADAPTIVE_END = "## END_ADAPTIVE_SECTION"
CORE_BEGIN = "BEGIN_CORE_IDENTITY"
CORE_END = "END_CORE_IDENTITY"

# Whole-line markers; a leading "#"/"##" is optional on either marker family.
_MARKER = re.compile(
    r"^[ \t]*(?:#+[ \t]*)?(?P<name>(?:BEGIN|END)_(?:ADAPTIVE_SECTION|CORE_IDENTITY))[ \t]*\r?\n?$"
)


class PromptStructureError(ValueError):
    pass


class CoreIdentityViolation(RuntimeError):
    def __init__(self, offset: int, detail: str = ""):
        msg = f"core identity block changed at byte offset {offset}; prompt patch aborted"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.offset = offset


@dataclass(frozen=True)
class PromptDocument:
    """Offsets into ``text`` (character indices) for the two guarded regions.

    ``adaptive`` is the body strictly between the adaptive marker lines.
    ``core_identity`` spans both core marker lines inclusive.
    """

    text: str
    adaptive_start: int
    adaptive_end: int
    core_start: int | None = None
    core_end: int | None = None

    @property
    def preamble(self) -> str:
        first = self.adaptive_start if self.core_start is None else min(self.core_start, self.adaptive_start)
        return self.text[:first]

    @property
    def adaptive(self) -> str:
        return self.text[self.adaptive_start:self.adaptive_end]

    @property
    def core_identity(self) -> str | None:
        if self.core_start is None:
            return None
        return self.text[self.core_start:self.core_end]

    @property
    def postamble(self) -> str:
        last = self.adaptive_end if self.core_end is None else max(self.core_end, self.adaptive_end)
        return self.text[last:]

    def with_adaptive(self, body: str) -> str:
        return self.text[: self.adaptive_start] + body + self.text[self.adaptive_end:]

    def serialize(self) -> str:
        return self.text


def parse_prompt(text: str) -> PromptDocument:
    markers: dict[str, list[tuple[int, int]]] = {}
    pos = 0
    for line in text.splitlines(keepends=True):
        m = _MARKER.match(line)
        if m:
            markers.setdefault(m.group("name"), []).append((pos, pos + len(line)))
        pos += len(line)

    def one(name: str, required: bool) -> tuple[int, int] | None:
        found = markers.get(name, [])
        if len(found) > 1:
            raise PromptStructureError(f"duplicate {name} marker")
        if not found:
            if required:
                raise PromptStructureError(f"missing {name} marker")
            return None
        return found[0]

    if "BEGIN_ADAPTIVE_SECTION" not in markers and "END_ADAPTIVE_SECTION" not in markers:
        raise PromptStructureError("no adaptive section")
    a_begin = one("BEGIN_ADAPTIVE_SECTION", True)
    a_end = one("END_ADAPTIVE_SECTION", True)
    if a_end[0] < a_begin[1]:
        raise PromptStructureError("END_ADAPTIVE_SECTION precedes BEGIN_ADAPTIVE_SECTION")

    c_begin = one("BEGIN_CORE_IDENTITY", False)
    c_end = one("END_CORE_IDENTITY", False)
    if (c_begin is None) != (c_end is None):
        raise PromptStructureError("BEGIN_CORE_IDENTITY and END_CORE_IDENTITY must appear together")
    core_start = core_end = None
    if c_begin is not None:
        if c_end[0] < c_begin[1]:
            raise PromptStructureError("END_CORE_IDENTITY precedes BEGIN_CORE_IDENTITY")
        core_start, core_end = c_begin[0], c_end[1]
        overlaps = core_start < a_end[1] and a_begin[0] < core_end
        if overlaps:
            raise PromptStructureError("core identity block overlaps the adaptive section")
    return PromptDocument(text, a_begin[1], a_end[0], core_start, core_end)


def render_adaptive(diagnosis: RbtDiagnosis) -> str:
    header = (
        f"# Reflection update (as_of={format_iso(diagnosis.as_of)}, "
        f"fallback={'true' if diagnosis.fallback else 'false'})\n"
    )
    if not diagnosis.prompt_rules_to_add:
        return header + "- no changes required\n"
    lines = [header]
    lines += [f"- {rule}\n" for rule in diagnosis.prompt_rules_to_add]
    if diagnosis.top_thorn:
        lines.append(f"Top thorn addressed: {diagnosis.top_thorn}\n")
    return "".join(lines)


def first_difference(a: bytes, b: bytes) -> int:
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    return min(len(a), len(b))


def guard_core_identity(old: PromptDocument, new_text: str) -> PromptDocument:
    """Re-parse ``new_text`` and demand a byte-identical core block."""
    try:
        new = parse_prompt(new_text)
    except PromptStructureError as exc:
        raise CoreIdentityViolation(0, f"patched prompt no longer parses: {exc}") from exc
    before = (old.core_identity or "").encode("utf-8")
    after = (new.core_identity or "").encode("utf-8")
    if (old.core_identity is None) != (new.core_identity is None) or before != after:
        start = len(old.text[: old.core_start or 0].encode("utf-8"))
        raise CoreIdentityViolation(start + first_difference(before, after))
    return new


def apply_prompt_patch(
    old: str,
    diagnosis: RbtDiagnosis,
    renderer: Callable[[RbtDiagnosis], str] = render_adaptive,
    post_render: Callable[[str], str] | None = None,
) -> str:
    """Return ``old`` with only its adaptive body replaced.

    ``post_render`` is a fault-injection hook applied to the whole patched
    text before the guard runs.
    """
    doc = parse_prompt(old)
    new_text = doc.with_adaptive(renderer(diagnosis))
    if post_render is not None:
        new_text = post_render(new_text)
    guard_core_identity(doc, new_text)
    return new_text


def atomic_write(path: str | os.PathLike, data: str | bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def patch_prompt_file(
    prompt_path: str | os.PathLike,
    diagnosis: RbtDiagnosis,
    out_dir: str | os.PathLike,
    renderer: Callable[[RbtDiagnosis], str] = render_adaptive,
    post_render: Callable[[str], str] | None = None,
) -> Path:
    """Patch the prompt and write ``out_dir/new_prompt.txt``; nothing is written on abort."""
    old = Path(prompt_path).read_bytes().decode("utf-8")
    new_text = apply_prompt_patch(old, diagnosis, renderer, post_render)
    return atomic_write(Path(out_dir) / "new_prompt.txt", new_text)
