"""Stage machine, guarded stage execution, run manifest and artifact layout."""
from __future__ import annotations

import enum
import json
import logging
import os
import traceback
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Mapping

from .appraisal import AppraisalRuleTable, appraise_event
from .emobank import EmoBank, EmoSnapshot
from .events import DEFAULT_MAX_EVENTS, load_window
from .prompt_patch import atomic_write, patch_prompt_file
from .proposals import get_reasoner, load_rules, persist_proposal, scan_hotspots, snapshot_repo, tree_hash
from .proposals.scanner import DEFAULT_RULES
from .rbt import InternalThorn, RbtDiagnosis, capture_internal_failure, diagnose, fallback_diagnose
from .timeutil import compact, ensure_utc, format_iso, parse_iso, utcnow

log = logging.getLogger(__name__)

STATE_FILE = "run_state.json"
LOCK_FILE = ".vigil.lock"
SNAPSHOT_FILE = "emo_snapshot.json"


class Stage(str, enum.Enum):
    START = "start"
    EB_UPDATED = "eb_updated"
    DIAGNOSED = "diagnosed"
    PROMPT_DONE = "prompt_done"
    DIFF_DONE = "diff_done"


CHAIN = tuple(Stage)

# tool -> (required stage, resulting stage)
TOOLS: dict[str, tuple[Stage, Stage]] = {
    "update_emobank": (Stage.START, Stage.EB_UPDATED),
    "diagnose_rbt": (Stage.EB_UPDATED, Stage.DIAGNOSED),
    "build_prompt_patch": (Stage.DIAGNOSED, Stage.PROMPT_DONE),
    "build_code_proposal": (Stage.PROMPT_DONE, Stage.DIFF_DONE),
}
TOOL_ORDER = tuple(TOOLS)


class ConfigError(ValueError):
    """Inputs that cannot start a run; reported before any stage executes."""


class IllegalTransition(RuntimeError):
    def __init__(self, tool: str, current: Stage, required: Stage):
        self.tool, self.current, self.required = tool, current, required
        super().__init__(f"illegal transition: requires {required.value}, at {current.value} ({tool})")


class ManifestIOError(OSError):
    """The run manifest itself cannot be read or written; the run aborts."""


class RunLocked(RuntimeError):
    pass


@dataclass
class RunManifest:
    run_id: str
    now: datetime
    stage: Stage = Stage.START
    cue: str | None = None
    fallback_used: bool = False
    internal_thorns: list[InternalThorn] = field(default_factory=list)
    artifacts: dict[str, str] = field(default_factory=dict)
    outcomes: dict[str, str] = field(default_factory=dict)
    history: list[str] = field(default_factory=lambda: [Stage.START.value])

    @classmethod
    def fresh(cls, now: datetime) -> "RunManifest":
        now = ensure_utc(now)
        return cls(run_id=compact(now), now=now)

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "now": format_iso(self.now),
            "stage": self.stage.value,
            "cue": self.cue,
            "fallback_used": self.fallback_used,
            "internal_thorns": [t.to_dict() for t in self.internal_thorns],
            "artifacts": dict(sorted(self.artifacts.items())),
            "outcomes": dict(self.outcomes),
            "history": list(self.history),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunManifest":
        return cls(
            run_id=d["run_id"],
            now=parse_iso(d["now"])[0],
            stage=Stage(d["stage"]),
            cue=d.get("cue"),
            fallback_used=bool(d.get("fallback_used", False)),
            internal_thorns=[InternalThorn.from_dict(t) for t in d.get("internal_thorns", [])],
            artifacts=dict(d.get("artifacts", {})),
            outcomes=dict(d.get("outcomes", {})),
            history=list(d.get("history", [d["stage"]])),
        )

    def save(self, out_dir: str | os.PathLike) -> Path:
        try:
            return atomic_write(Path(out_dir) / STATE_FILE, json.dumps(self.to_dict(), indent=2) + "\n")
        except OSError as exc:
            raise ManifestIOError(f"cannot persist run manifest: {exc}") from exc

    @classmethod
    def load(cls, out_dir: str | os.PathLike) -> "RunManifest | None":
        path = Path(out_dir) / STATE_FILE
        if not path.exists():
            return None
        try:
            return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except (OSError, ValueError, KeyError) as exc:
            raise ManifestIOError(f"cannot read run manifest {path}: {exc}") from exc


def advance(manifest: RunManifest, tool: str) -> RunManifest:
    """Move one step along the chain, or raise IllegalTransition."""
    if tool not in TOOLS:
        raise ValueError(f"unknown stage tool {tool!r}; known: {', '.join(TOOL_ORDER)}")
    required, nxt = TOOLS[tool]
    if manifest.stage != required:
        raise IllegalTransition(tool, manifest.stage, required)
    manifest.stage = nxt
    manifest.history.append(nxt.value)
    return manifest


def check_transition(manifest: RunManifest, tool: str) -> None:
    required, _ = TOOLS[tool]
    if manifest.stage != required:
        raise IllegalTransition(tool, manifest.stage, required)


@dataclass(frozen=True)
class RunConfig:
    log: Path
    prompt: Path
    repo: Path
    out: Path
    now: datetime | None = None
    window_hours: float = 24.0
    half_life_hours: float = 12.0
    max_events: int = DEFAULT_MAX_EVENTS
    bank: Path | None = None
    rules: Path | None = None
    inject_fault: str | None = None
    reasoner: str = "deterministic"

    def __post_init__(self):
        for name in ("log", "prompt", "repo", "out"):
            object.__setattr__(self, name, Path(getattr(self, name)))
        for name in ("bank", "rules"):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, Path(getattr(self, name)))

    @property
    def bank_path(self) -> Path:
        return self.bank if self.bank is not None else self.log.parent / "emobank.jsonl"

    def validate(self, tools: tuple[str, ...] = TOOL_ORDER) -> None:
        """Raise ConfigError for anything the given stage tools would trip over."""
        if self.window_hours <= 0:
            raise ConfigError("--window-hours must be positive")
        if self.half_life_hours <= 0:
            raise ConfigError("--half-life must be positive")
        if self.max_events <= 0:
            raise ConfigError("max events must be positive")
        if self.inject_fault is not None and self.inject_fault not in TOOLS:
            raise ConfigError(f"--inject-fault must be one of: {', '.join(TOOL_ORDER)}")
        if {"update_emobank", "diagnose_rbt"} & set(tools) and not self.log.is_file():
            raise ConfigError(f"event log not found: {self.log}")
        if "build_prompt_patch" in tools and not self.prompt.is_file():
            raise ConfigError(f"prompt file not found: {self.prompt}")
        if "build_code_proposal" in tools and not self.repo.is_dir():
            raise ConfigError(f"repo root is not a directory: {self.repo}")
        if self.rules is not None and not self.rules.is_file():
            raise ConfigError(f"rules file not found: {self.rules}")
        self.overrides()

    def overrides(self) -> tuple[AppraisalRuleTable | None, tuple | None]:
        """``(appraisal table, scanner patterns)`` from ``--rules``, either may be None."""
        if self.rules is None:
            return None, None
        try:
            data = json.loads(self.rules.read_text(encoding="utf-8"))
            table = AppraisalRuleTable.from_rules(data["appraisal"]) if "appraisal" in data else None
            patterns = load_rules(self.rules) if "patterns" in data else None
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"invalid rules file {self.rules}: {exc}") from exc
        return table, patterns


@dataclass(frozen=True)
class StageOutcome:
    tool: str
    status: str  # "ok" or "degraded"
    thorn: InternalThorn | None = None

    @property
    def guard_abort(self) -> bool:
        return self.thorn is not None and "CoreIdentityViolation" in self.thorn.trace


# -- stage tools --------------------------------------------------------------------


def _fetch_recent_events(path, hours, *, now=None, max_events=DEFAULT_MAX_EVENTS):
    return load_window(path, now or utcnow(), hours, max_events)


def _read_diagnosis(manifest: RunManifest) -> RbtDiagnosis:
    path = manifest.artifacts.get("rbt")
    if not path:
        raise FileNotFoundError("no diagnosis artifact recorded for this run")
    return RbtDiagnosis.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _write_json(path: Path, data: Any) -> Path:
    return atomic_write(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def _write_snapshot(cfg: RunConfig, manifest: RunManifest, bank: EmoBank) -> None:
    snap = bank.snapshot(manifest.now, cfg.window_hours, cfg.half_life_hours)
    manifest.artifacts["emo_snapshot"] = str(_write_json(cfg.out / SNAPSHOT_FILE, snap.to_dict()))
    manifest.artifacts["emobank"] = str(cfg.bank_path)
    manifest.cue = bank.top_cause(manifest.now, cfg.window_hours, cfg.half_life_hours)


def tool_update_emobank(cfg: RunConfig, manifest: RunManifest) -> None:
    if cfg.inject_fault == "update_emobank":
        raise RuntimeError("injected fault in update_emobank")
    table, _ = cfg.overrides()
    events = load_window(cfg.log, manifest.now, cfg.window_hours, cfg.max_events)
    bank = EmoBank(cfg.bank_path)
    # high-water mark: re-running over the same log deposits nothing twice
    mark = bank.rows[-1].ts if bank.rows else None
    for e in events:
        if mark is not None and e.ts <= mark:
            continue
        a = appraise_event(e, table)
        if a is not None:
            bank.deposit(a, manifest.now)
    _write_snapshot(cfg, manifest, bank)


def tool_diagnose_rbt(cfg: RunConfig, manifest: RunManifest) -> None:
    if cfg.inject_fault == "diagnose_rbt":
        # positional and keyword 'hours' together: a genuine schema conflict
        events = _fetch_recent_events(cfg.log, cfg.window_hours, hours=cfg.window_hours)
    else:
        events = _fetch_recent_events(cfg.log, cfg.window_hours, now=manifest.now, max_events=cfg.max_events)
    bank = EmoBank(cfg.bank_path)
    diag = diagnose(bank, events, manifest.now, cfg.half_life_hours, cfg.window_hours)
    _store_diagnosis(cfg, manifest, diag)


def _store_diagnosis(cfg: RunConfig, manifest: RunManifest, diag: RbtDiagnosis) -> None:
    path = atomic_write(cfg.out / f"rbt_{manifest.run_id}.json", diag.to_json() + "\n")
    manifest.artifacts["rbt"] = str(path)


def tool_build_prompt_patch(cfg: RunConfig, manifest: RunManifest) -> None:
    if cfg.inject_fault == "build_prompt_patch":
        raise RuntimeError("injected fault in build_prompt_patch")
    diag = _read_diagnosis(manifest)
    manifest.artifacts["prompt"] = str(patch_prompt_file(cfg.prompt, diag, cfg.out))


def tool_build_code_proposal(cfg: RunConfig, manifest: RunManifest) -> None:
    if cfg.inject_fault == "build_code_proposal":
        raise RuntimeError("injected fault in build_code_proposal")
    _, patterns = cfg.overrides()
    diag = _read_diagnosis(manifest)
    before = tree_hash(cfg.repo)
    hotspots = scan_hotspots(cfg.repo, patterns or DEFAULT_RULES)
    proposal = get_reasoner(cfg.reasoner).propose(diag, snapshot_repo(cfg.repo), hotspots, manifest.now)
    if tree_hash(cfg.repo) != before:
        raise RuntimeError(f"target repo {cfg.repo} changed during proposal generation")
    if proposal is None:
        manifest.artifacts["strategy"] = "none"
        return
    diff_path, pr_path = persist_proposal(proposal, cfg.out)
    manifest.artifacts.update(strategy=proposal.strategy, diff=str(diff_path), pr_note=str(pr_path))


STAGE_TOOLS: dict[str, Callable[[RunConfig, RunManifest], None]] = {
    "update_emobank": tool_update_emobank,
    "diagnose_rbt": tool_diagnose_rbt,
    "build_prompt_patch": tool_build_prompt_patch,
    "build_code_proposal": tool_build_code_proposal,
}


# -- fallbacks ----------------------------------------------------------------------


def fallback_update_emobank(cfg: RunConfig, manifest: RunManifest) -> None:
    try:
        _write_snapshot(cfg, manifest, EmoBank(cfg.bank_path))
    except Exception:  # noqa: BLE001 - a neutral snapshot is the floor
        log.exception("bank unreadable; writing a neutral snapshot")
        snap = EmoSnapshot.neutral(manifest.now, cfg.half_life_hours)
        manifest.artifacts["emo_snapshot"] = str(_write_json(cfg.out / SNAPSHOT_FILE, snap.to_dict()))


def fallback_diagnose_rbt(cfg: RunConfig, manifest: RunManifest) -> None:
    snap = None
    path = cfg.out / SNAPSHOT_FILE
    try:
        snap = EmoSnapshot.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (OSError, ValueError, KeyError, TypeError):
        log.warning("no cached snapshot at %s; fallback diagnosis uses the cue only", path)
    _store_diagnosis(cfg, manifest, fallback_diagnose(snap, manifest.cue))


def fallback_build_prompt_patch(cfg: RunConfig, manifest: RunManifest) -> None:
    try:
        original = cfg.prompt.read_bytes()
    except OSError:
        original = b""
    path = atomic_write(cfg.out / "new_prompt.provisional.txt", original)
    manifest.artifacts["prompt_provisional"] = str(path)


def fallback_build_code_proposal(cfg: RunConfig, manifest: RunManifest) -> None:
    note = (
        f"# Provisional proposal ({manifest.run_id})\n\n"
        "Code proposal generation failed for this run; no diff was produced.\n"
        "See the remediation note in this directory.\n"
    )
    path = atomic_write(cfg.out / "proposals" / f"PR_{manifest.run_id}.provisional.md", note)
    manifest.artifacts.update(strategy="none", pr_note_provisional=str(path))


FALLBACKS: dict[str, Callable[[RunConfig, RunManifest], None]] = {
    "update_emobank": fallback_update_emobank,
    "diagnose_rbt": fallback_diagnose_rbt,
    "build_prompt_patch": fallback_build_prompt_patch,
    "build_code_proposal": fallback_build_code_proposal,
}


# -- error boundary -----------------------------------------------------------------


def render_remediation(thorn: InternalThorn, run_id: str) -> str:
    lines = [
        f"# Remediation: {thorn.tool} ({thorn.type})",
        "",
        f"- Run: {run_id}",
        f"- Stage tool: {thorn.tool}",
        f"- Source: {thorn.file or 'unknown'}",
        "",
        "## Excerpt",
        "",
        "```",
        thorn.excerpt,
        "```",
        "",
        "## Suggestions",
        "",
    ]
    lines += [f"{i}. {s}" for i, s in enumerate(thorn.suggestions, 1)]
    lines += ["", "## Trace", "", "```", thorn.trace.rstrip("\n"), "```", ""]
    return "\n".join(lines)


def write_remediation(out_dir: Path, thorn: InternalThorn, manifest: RunManifest) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    n = 1
    while True:
        suffix = manifest.run_id if n == 1 else f"{manifest.run_id}-{n}"
        path = out_dir / f"remediation_{suffix}.md"
        try:
            with open(path, "x", encoding="utf-8") as fh:
                fh.write(render_remediation(thorn, manifest.run_id))
            return path
        except FileExistsError:
            n += 1


def run_stage_guarded(cfg: RunConfig, manifest: RunManifest, tool: str) -> tuple[RunManifest, StageOutcome]:
    """Run ``tool``; on failure record an internal thorn, run its fallback, and advance anyway."""
    check_transition(manifest, tool)
    try:
        STAGE_TOOLS[tool](cfg, manifest)
        outcome = StageOutcome(tool, "ok")
    except ManifestIOError:
        raise
    except Exception:  # noqa: BLE001 - this is the boundary
        trace = traceback.format_exc()
        thorn = capture_internal_failure(tool, trace)
        log.warning("%s failed (%s); running fallback", tool, thorn.type)
        manifest.internal_thorns.append(thorn)
        key = "remediation" if "remediation" not in manifest.artifacts else f"remediation_{tool}"
        manifest.artifacts[key] = str(write_remediation(cfg.out, thorn, manifest))
        FALLBACKS[tool](cfg, manifest)
        manifest.fallback_used = True
        outcome = StageOutcome(tool, "degraded", thorn)
    advance(manifest, tool)
    manifest.outcomes[tool] = outcome.status
    manifest.save(cfg.out)
    return manifest, outcome


# -- whole runs ---------------------------------------------------------------------


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


class RunLock:
    """Exclusive ownership of an output directory for one run."""

    def __init__(self, out_dir: Path):
        self.path = Path(out_dir) / LOCK_FILE

    def __enter__(self) -> "RunLock":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        for _ in range(2):
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                try:
                    pid = int(self.path.read_text().strip() or 0)
                except (OSError, ValueError):
                    pid = 0
                if pid and _pid_alive(pid):
                    raise RunLocked(f"{self.path.parent} is in use by process {pid}") from None
                self.path.unlink(missing_ok=True)  # stale lock
                continue
            with os.fdopen(fd, "w") as fh:
                fh.write(str(os.getpid()))
            return self
        raise RunLocked(f"cannot acquire {self.path}")

    def __exit__(self, *exc) -> None:
        self.path.unlink(missing_ok=True)


@dataclass(frozen=True)
class RunResult:
    manifest: RunManifest
    outcomes: tuple[StageOutcome, ...]

    @property
    def guard_aborted(self) -> bool:
        return any(o.guard_abort for o in self.outcomes)


def run_all(cfg: RunConfig, observer: Callable[[RunManifest], None] | None = None) -> RunResult:
    """Fresh run through all four stages; always ends at diff_done unless the manifest is unwritable."""
    cfg.validate()
    manifest = RunManifest.fresh(cfg.now or utcnow())
    outcomes = []
    with RunLock(cfg.out):
        manifest.save(cfg.out)
        if observer:
            observer(manifest)
        for tool in TOOL_ORDER:
            manifest, outcome = run_stage_guarded(cfg, manifest, tool)
            outcomes.append(outcome)
            if observer:
                observer(manifest)
    return RunResult(manifest, tuple(outcomes))


def run_single(cfg: RunConfig, tool: str) -> RunResult:
    """One stage as its own invocation, resuming the manifest in ``cfg.out``.

    ``update_emobank`` opens a fresh run when the directory holds none, or when
    the pinned clock names a different run id than the stored one.
    """
    if tool not in TOOLS:
        raise ConfigError(f"unknown stage tool {tool!r}")
    cfg.validate((tool,))
    with RunLock(cfg.out):
        manifest = RunManifest.load(cfg.out)
        if tool == "update_emobank":
            now = cfg.now or utcnow()
            if manifest is None or manifest.run_id != compact(ensure_utc(now)):
                manifest = RunManifest.fresh(now)
        elif manifest is None:
            manifest = RunManifest.fresh(cfg.now or utcnow())
        manifest, outcome = run_stage_guarded(cfg, manifest, tool)
    return RunResult(manifest, (outcome,))


def format_summary(result: RunResult) -> str:
    m = result.manifest
    lines = [f"run {m.run_id}: stage={m.stage.value} fallback_used={str(m.fallback_used).lower()}"]
    for o in result.outcomes:
        detail = f" [{o.thorn.type}: {o.thorn.excerpt}]" if o.thorn else ""
        lines.append(f"  {o.tool:<20} {o.status}{detail}")
    if m.cue:
        lines.append(f"  cue: {m.cue}")
    for key, path in sorted(m.artifacts.items()):
        lines.append(f"  {key}: {path}")
    return "\n".join(lines)
