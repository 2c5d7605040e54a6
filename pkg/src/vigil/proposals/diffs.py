"""Unified diff rendering (git-style headers) and a strict, zero-fuzz applier."""
from __future__ import annotations

import difflib
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

CONTEXT_LINES = 3
NO_EOL = "\\ No newline at end of file"
_HUNK = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")


class PatchApplyError(ValueError):
    pass


@dataclass(frozen=True)
class FileEdit:
    """New content for ``path``; ``old`` is None when the file is created."""

    path: str
    old: str | None
    new: str


def _lines(text: str) -> list[str]:
    return text.splitlines(keepends=True)


def _mark_missing_eol(diff_lines: list[str]) -> list[str]:
    out = []
    for line in diff_lines:
        if line.endswith("\n"):
            out.append(line)
        else:
            out.append(line + "\n")
            out.append(NO_EOL + "\n")
    return out


def file_diff(edit: FileEdit, context: int = CONTEXT_LINES) -> str:
    old = edit.old or ""
    if old == edit.new:
        return ""
    header = [f"diff --git a/{edit.path} b/{edit.path}\n"]
    if edit.old is None:
        header.append("new file mode 100644\n")
        fromfile = "/dev/null"
    else:
        fromfile = f"a/{edit.path}"
    body = list(
        difflib.unified_diff(_lines(old), _lines(edit.new), fromfile, f"b/{edit.path}", n=context, lineterm="\n")
    )
    body[:2] = [f"--- {fromfile}\n", f"+++ b/{edit.path}\n"]
    return "".join(header + body[:2] + _mark_missing_eol(body[2:]))


def render_diff(edits: Sequence[FileEdit], context: int = CONTEXT_LINES) -> str:
    return "".join(file_diff(e, context) for e in sorted(edits, key=lambda e: e.path))


def _section_start(lines: list[str], i: int, git_style: bool) -> bool:
    if git_style:
        return lines[i].startswith("diff --git ")
    return lines[i].startswith("--- ") and i + 1 < len(lines) and lines[i + 1].startswith("+++ ")


def _split_files(diff: str) -> list[tuple[str | None, str, list[str]]]:
    """Return ``(old_path, new_path, hunk_lines)`` per file section."""
    sections: list[tuple[str | None, str, list[str]]] = []
    lines = diff.splitlines(keepends=True)
    git_style = any(ln.startswith("diff --git ") for ln in lines)
    i = 0
    while i < len(lines):
        line = lines[i]
        if line.startswith("--- ") and i + 1 < len(lines) and lines[i + 1].startswith("+++ "):
            old = line[4:].rstrip("\n")
            new = lines[i + 1][4:].rstrip("\n")
            old_path = None if old == "/dev/null" else old.split("/", 1)[1]
            new_path = new.split("/", 1)[1]
            i += 2
            body = []
            while i < len(lines) and not _section_start(lines, i, git_style):
                body.append(lines[i])
                i += 1
            sections.append((old_path, new_path, body))
        else:
            i += 1
    return sections


def _apply_hunks(original: str, body: list[str], path: str) -> str:
    src = _lines(original)
    out: list[str] = []
    pos = 0
    i = 0
    while i < len(body):
        m = _HUNK.match(body[i])
        if not m:
            raise PatchApplyError(f"{path}: expected hunk header, got {body[i]!r}")
        old_start = int(m.group(1))
        old_len = int(m.group(2)) if m.group(2) is not None else 1
        start = old_start - 1 if old_len else old_start
        if start < pos:
            raise PatchApplyError(f"{path}: overlapping hunks")
        out.extend(src[pos:start])
        pos = start
        i += 1
        while i < len(body) and not body[i].startswith("@@"):
            tag, text = body[i][:1], body[i][1:]
            if i + 1 < len(body) and body[i + 1].startswith("\\"):
                text = text[:-1] if text.endswith("\n") else text
                i += 1
            if tag in (" ", "-"):
                if pos >= len(src) or src[pos] != text:
                    have = src[pos] if pos < len(src) else "<EOF>"
                    raise PatchApplyError(f"{path}: context mismatch at line {pos + 1}: {have!r} != {text!r}")
                pos += 1
                if tag == " ":
                    out.append(text)
            elif tag == "+":
                out.append(text)
            else:
                raise PatchApplyError(f"{path}: bad diff line {body[i]!r}")
            i += 1
    out.extend(src[pos:])
    return "".join(out)


def apply_diff(files: Mapping[str, str], diff: str) -> dict[str, str]:
    """Apply ``diff`` to an in-memory tree with zero fuzz; returns the new tree."""
    result = dict(files)
    for old_path, new_path, body in _split_files(diff):
        if old_path is None:
            if new_path in result:
                raise PatchApplyError(f"{new_path}: file to be created already exists")
            base = ""
        else:
            if old_path not in result:
                raise PatchApplyError(f"{old_path}: no such file")
            base = result[old_path]
        result[new_path] = _apply_hunks(base, body, new_path)
    return result
