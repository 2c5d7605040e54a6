"""Strategy selection, diff/PR-note generation and persistence of proposals."""
from __future__ import annotations

import ast
import logging
import os
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Callable, Sequence

from ..rbt import RbtDiagnosis
from ..timeutil import compact, ensure_utc, format_iso
from .diffs import FileEdit, PatchApplyError, apply_diff, render_diff
from .scanner import DEFAULT_IGNORE_DIRS, Hotspot, read_text_file
from .strategies import RepoSnapshot, Strategy, default_registry

log = logging.getLogger(__name__)


class ProposalError(RuntimeError):
    """The strategy produced edits that do not survive verification."""


@dataclass(frozen=True)
class PatchProposal:
    diff: str
    pr_note: str
    created_at: datetime
    strategy: str
    edits: tuple[FileEdit, ...] = ()
    reasoner: str = "deterministic"


def snapshot_repo(root: str | os.PathLike, ignore_dirs=DEFAULT_IGNORE_DIRS) -> RepoSnapshot:
    root = Path(root)
    files: dict[str, str] = {}
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = sorted(d for d in dirnames if d not in ignore_dirs)
        for name in sorted(filenames):
            p = Path(dirpath) / name
            try:
                text = read_text_file(p)
            except OSError:
                continue
            if text is not None:
                files[p.relative_to(root).as_posix()] = text
    return RepoSnapshot(files)


def select_strategy(
    diagnosis: RbtDiagnosis,
    hotspots: Sequence[Hotspot],
    registry: Sequence[Strategy] | None = None,
) -> Strategy | None:
    """Highest-scoring strategy; registry order breaks ties; all-zero means none."""
    registry = default_registry() if registry is None else list(registry)
    if not registry:
        raise ValueError("strategy registry is empty")
    best, best_score = None, 0.0
    for s in registry:
        score = s.score(diagnosis, hotspots)
        if score < 0:
            raise ValueError(f"{s.name} returned a negative score")
        if score > best_score:
            best, best_score = s, score
    return best


def _summary(diagnosis: RbtDiagnosis) -> list[str]:
    out = [
        f"- As of: {format_iso(diagnosis.as_of)}" + (" (fallback diagnosis)" if diagnosis.fallback else ""),
        f"- Top thorn: `{diagnosis.top_thorn}`" if diagnosis.top_thorn else "- Top thorn: none",
        f"- Roses: {len(diagnosis.roses)}, buds: {len(diagnosis.buds)}, thorns: {len(diagnosis.thorns)}",
    ]
    for t in diagnosis.thorns:
        out.append(f"  - thorn `{t.cause}` ({t.emotion}, score {t.score:.3f}, {len(t.evidence)} entries)")
    return out


def render_pr_note(
    strategy: Strategy,
    diagnosis: RbtDiagnosis,
    hotspots: Sequence[Hotspot],
    edits: Sequence[FileEdit],
    created_at: datetime,
) -> str:
    title = diagnosis.top_thorn or "reliability"
    lines = [
        f"# {strategy.name}: remediate `{title}`",
        "",
        f"Generated {format_iso(created_at)}. Proposal only; nothing in the target repo was modified.",
        "",
        "## Diagnosis",
        *_summary(diagnosis),
        "",
        "## Hotspots",
    ]
    if hotspots:
        lines += ["| file | line | pattern | excerpt |", "| --- | --- | --- | --- |"]
        for h in hotspots:
            excerpt = h.excerpt.strip().replace("|", "\\|")
            lines.append(f"| {h.file} | {h.line} | {h.pattern_id} | `{excerpt}` |")
    else:
        lines.append("none")
    lines += ["", "## Rationale", strategy.rationale(diagnosis, hotspots), "", "## Files"]
    for e in sorted(edits, key=lambda e: e.path):
        lines.append(f"- `{e.path}` ({'new' if e.old is None else 'modified'})")
    return "\n".join(lines) + "\n"


def _verify(repo: RepoSnapshot, edits: Sequence[FileEdit], diff: str) -> None:
    try:
        patched = apply_diff(repo.files, diff)
    except PatchApplyError as exc:
        raise ProposalError(f"generated diff does not apply: {exc}") from exc
    for e in edits:
        if patched.get(e.path) != e.new:
            raise ProposalError(f"diff round-trip mismatch for {e.path}")
        if e.path.endswith(".py"):
            was_valid = e.old is None or _parses(e.old)
            if was_valid and not _parses(e.new):
                raise ProposalError(f"edit leaves {e.path} syntactically invalid")


def _parses(src: str) -> bool:
    try:
        ast.parse(src)
    except SyntaxError:
        return False
    return True


def generate_proposal(
    strategy: Strategy,
    repo: RepoSnapshot,
    hotspots: Sequence[Hotspot],
    diagnosis: RbtDiagnosis,
    created_at: datetime,
    reasoner: str = "deterministic",
) -> PatchProposal:
    edits = [e for e in strategy.transform(repo, hotspots, diagnosis) if (e.old or "") != e.new]
    if not edits:
        raise ProposalError(f"{strategy.name} produced no edits")
    diff = render_diff(edits)
    _verify(repo, edits, diff)
    note = render_pr_note(strategy, diagnosis, hotspots, edits, created_at)
    return PatchProposal(diff, note, ensure_utc(created_at), strategy.name, tuple(edits), reasoner)


def persist_proposal(p: PatchProposal, out_dir: str | os.PathLike) -> tuple[Path, Path]:
    """Write ``proposals/patch_<ts>.diff`` and ``proposals/PR_<ts>.md`` without overwriting."""
    folder = Path(out_dir) / "proposals"
    folder.mkdir(parents=True, exist_ok=True)
    prefix = "" if p.reasoner == "deterministic" else "LLM_"
    stamp = compact(p.created_at)
    n = 1
    while True:
        suffix = stamp if n == 1 else f"{stamp}-{n}"
        diff_path = folder / f"{prefix}patch_{suffix}.diff"
        pr_path = folder / f"{prefix}PR_{suffix}.md"
        if not diff_path.exists() and not pr_path.exists():
            break
        n += 1
    written: list[Path] = []
    try:
        for path, body in ((diff_path, p.diff), (pr_path, p.pr_note)):
            with open(path, "x", encoding="utf-8", newline="") as fh:
                written.append(path)
                fh.write(body)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    return diff_path, pr_path


class Reasoner:
    """Produces a proposal (or None) from a diagnosis and the scanned repo."""

    name = "deterministic"

    def propose(
        self,
        diagnosis: RbtDiagnosis,
        repo: RepoSnapshot,
        hotspots: Sequence[Hotspot],
        created_at: datetime,
    ) -> PatchProposal | None:
        strategy = select_strategy(diagnosis, hotspots)
        if strategy is None:
            return None
        return generate_proposal(strategy, repo, hotspots, diagnosis, created_at, self.name)


REASONERS: dict[str, Callable[[], Reasoner]] = {"deterministic": Reasoner}


def register_reasoner(name: str, factory: Callable[[], Reasoner]) -> None:
    REASONERS[name] = factory


def get_reasoner(name: str = "deterministic") -> Reasoner:
    try:
        return REASONERS[name]()
    except KeyError:
        raise ValueError(f"unknown reasoner {name!r}; known: {', '.join(sorted(REASONERS))}") from None
