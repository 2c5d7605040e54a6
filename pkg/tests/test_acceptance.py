"""End-to-end acceptance checks; conftest prints one PASS/FAIL line per criterion."""
from __future__ import annotations

import ast
import json
import random
import shutil
import subprocess
import time
from datetime import timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vigil.appraisal import Appraisal
from vigil.cli import main
from vigil.emobank import BankEntry, DepositKind, EmoBank, decayed_intensity
from vigil.orchestrator import TOOLS, IllegalTransition, RunManifest, Stage, advance, run_all
from vigil.prompt_patch import CoreIdentityViolation, parse_prompt, patch_prompt_file
from vigil.proposals import CONTRACT_FUNCTIONS, TZReceiptStrategy, scan_hotspots, snapshot_repo, tree_hash
from vigil.proposals.engine import generate_proposal
from vigil.rbt import RbtDiagnosis, classify, diagnose
from vigil.robin_sim import AGENT_PROMPT, log_metrics

from conftest import NOW, PATCH, config_for, make_workspace


def _cli_run_all(paths, *extra):
    return main([
        "run-all", "--log", str(paths["log"]), "--prompt", str(paths["prompt"]), "--repo", str(paths["repo"]),
        "--out", str(paths["out"]), "--now", "2025-03-01T12:00:00Z", *extra,
    ])


def _diagnosis(out) -> RbtDiagnosis:
    (path,) = out.glob("rbt_*.json")
    return RbtDiagnosis.from_dict(json.loads(path.read_text()))


def test_criterion_01_case_study_before(before_ws, capsys):
    metrics = log_metrics(before_ws["log"])
    assert metrics.reminders == 12
    assert metrics.premature_toasts == 12
    assert abs(metrics.mean_latency_sec - 97.0) <= 1.0

    t0 = time.perf_counter()
    assert _cli_run_all(before_ws) == 0
    assert time.perf_counter() - t0 < 5.0

    diag = _diagnosis(before_ws["out"])
    assert diag.top_thorn == "reminder.toast:fail"
    assert diag.roses == ()
    evidence = {i for t in diag.thorns for i in t.evidence}
    rows = EmoBank(before_ws["log"].parent / "emobank.jsonl").rows
    contributing = [r for r in rows if r.entry_id in evidence or r.coalesced_with in evidence]
    assert max(r.intensity for r in contributing) >= 0.9


def test_criterion_02_case_study_after(after_ws):
    metrics = log_metrics(after_ws["log"])
    assert metrics.reminders == 12
    assert metrics.premature_toasts == 0
    assert abs(metrics.mean_latency_sec - 8.0) <= 1.0

    t0 = time.perf_counter()
    assert _cli_run_all(after_ws) == 0
    assert time.perf_counter() - t0 < 5.0

    diag = _diagnosis(after_ws["out"])
    assert diag.thorns == ()
    assert diag.prompt_rules_to_add == ()
    state = json.loads((after_ws["out"] / "run_state.json").read_text())
    assert state["artifacts"]["strategy"] == "none"
    assert not list((after_ws["out"]).glob("proposals/*.diff"))


def _entry(intensity, ts=NOW):
    return BankEntry(ts, "frustration", -1.0, intensity, "x:fail", "e", 1)


@settings(max_examples=1000, deadline=None)
@given(
    intensity=st.floats(0.01, 1.0),
    half_life=st.floats(0.25, 168.0),
    elapsed=st.floats(0.0, 2000.0),
    step=st.floats(1 / 60, 48.0),
)
def test_criterion_03_decay_suite(intensity, half_life, elapsed, step):
    e = _entry(intensity)
    assert decayed_intensity(e, NOW, half_life) == intensity
    at_half = decayed_intensity(e, NOW + timedelta(hours=half_life), half_life)
    assert abs(at_half - intensity / 2) <= 1e-9
    a = decayed_intensity(e, NOW + timedelta(hours=elapsed), half_life)
    b = decayed_intensity(e, NOW + timedelta(hours=elapsed + step), half_life)
    if a > 0:
        assert b < a


def _a(minutes, emotion, valence, intensity, cause="reminder.toast:fail"):
    return Appraisal(NOW + timedelta(minutes=minutes), emotion, valence, intensity, cause)


def test_criterion_04_deposit_policy_suite(tmp_path):
    # noise floor: same-sign weak signal dropped, an inversion is kept
    bank = EmoBank(tmp_path / "noise.jsonl")
    bank.deposit(_a(0, "frustration", -1.0, 0.9))
    assert bank.deposit(_a(30, "anxiety", -0.6, 0.2)).kind is DepositKind.DISCARDED_NOISE
    kept = bank.deposit(_a(60, "relief", 0.6, 0.2))
    assert kept.kind is DepositKind.STORED
    assert len(bank.rows) == 2

    # coalescing inside 5 minutes, capped at 1.0 when read
    bank = EmoBank(tmp_path / "coalesce.jsonl")
    first = bank.deposit(_a(0, "frustration", -1.0, 0.9))
    for m in (1, 2, 4):
        out = bank.deposit(_a(m, "frustration", -1.0, 0.9))
        assert out.kind is DepositKind.COALESCED
        assert out.prior_id == first.entry_ids[0]
    (logical,) = bank.logical_entries()
    assert len(logical.boosts) == 3
    assert logical.effective_intensity == 1.0
    assert len(bank.rows) == 4
    assert bank.deposit(_a(10, "frustration", -1.0, 0.9)).kind is DepositKind.STORED

    # rebound: one synthetic determination row, intensity per prior strength
    for prior, expected in ((0.9, 0.4), (0.5, 0.3)):
        bank = EmoBank(tmp_path / f"rebound_{prior}.jsonl")
        bank.deposit(_a(0, "frustration", -1.0, prior))
        out = bank.deposit(_a(8, "relief", 0.6, 0.35))
        assert out.kind is DepositKind.STORED_WITH_REBOUND
        synthetic = [r for r in bank.rows if r.synthetic]
        assert len(synthetic) == 1
        assert synthetic[0].emotion == "determination"
        assert synthetic[0].valence == 0.4
        assert synthetic[0].intensity == expected
    bank = EmoBank(tmp_path / "late.jsonl")
    bank.deposit(_a(0, "frustration", -1.0, 0.9))
    assert bank.deposit(_a(11, "relief", 0.6, 0.35)).kind is DepositKind.STORED


def _brute_force(emotion, valence, intensity):
    positive = emotion in ("relief", "pride", "joy", "gratitude", "calm")
    if positive and intensity >= 0.5:
        return "rose"
    if positive and valence >= 0.2:
        return "bud"
    if emotion == "curiosity" and intensity >= 0.3:
        return "bud"
    if emotion in ("frustration", "anxiety") and intensity >= 0.4:
        return "thorn"
    return None


BOUNDARY_CASES = [
    ("relief", 0.6, 0.5, "rose"),
    ("relief", 0.6, 0.49, "bud"),
    ("frustration", -1.0, 0.4, "thorn"),
    ("frustration", -1.0, 0.39, None),
    ("curiosity", 0.2, 0.3, "bud"),
    ("curiosity", 0.2, 0.29, None),
    ("calm", 0.2, 0.1, "bud"),
    ("calm", 0.19, 0.1, None),
    ("determination", 0.4, 0.9, None),
]


def test_criterion_05_rbt_boundary_suite():
    for emotion, valence, intensity, expected in BOUNDARY_CASES:
        got = classify(emotion, valence, intensity)
        got = got.value if got else None
        assert got == expected == _brute_force(emotion, valence, intensity), (emotion, valence, intensity)


def test_criterion_06_stage_machine_exhaustion():
    legal = {(req, tool) for tool, (req, _) in TOOLS.items()}
    seen = 0
    for stage in Stage:
        for tool, (required, nxt) in TOOLS.items():
            seen += 1
            m = RunManifest.fresh(NOW)
            m.stage = stage
            if (stage, tool) in legal:
                assert advance(m, tool).stage is nxt
            else:
                with pytest.raises(IllegalTransition) as info:
                    advance(m, tool)
                msg = str(info.value)
                assert f"requires {required.value}" in msg and f"at {stage.value}" in msg
                assert m.stage is stage
    assert seen == 20 and len(legal) == 4


def test_criterion_07_core_identity_guard(tmp_path):
    prompt = tmp_path / "prompt.txt"
    prompt.write_text(AGENT_PROMPT)
    doc = parse_prompt(AGENT_PROMPT)
    diag = RbtDiagnosis((), (), (), "reminder.toast:fail", ("Gate toasts on receipts.",), False, NOW)
    rng = random.Random(2024)

    for trial in range(100):
        out = tmp_path / f"out{trial}"

        def mutate(text, rng=rng):
            body = parse_prompt(text)
            pos = rng.randrange(body.core_start, body.core_end)
            choices = [c for c in map(chr, range(32, 127)) if c != text[pos]]
            return text[:pos] + rng.choice(choices) + text[pos + 1:]

        with pytest.raises(CoreIdentityViolation):
            patch_prompt_file(prompt, diag, out, post_render=mutate)
        assert not (out / "new_prompt.txt").exists()

    written = patch_prompt_file(prompt, diag, tmp_path / "ok").read_bytes()
    old = AGENT_PROMPT.encode()
    head = AGENT_PROMPT[: doc.adaptive_start].encode()
    tail = AGENT_PROMPT[doc.adaptive_end:].encode()
    assert written.startswith(head) and written.endswith(tail)
    assert written != old


@pytest.mark.skipif(PATCH is None, reason="GNU patch not installed")
def test_criterion_08_proposal_validity(before_ws, tmp_path):
    repo = before_ws["repo"]
    before_hash = tree_hash(repo)
    hotspots = scan_hotspots(repo)
    diag = RbtDiagnosis((), (), (), "reminder.toast:fail", (), False, NOW)
    proposal = generate_proposal(TZReceiptStrategy(), snapshot_repo(repo), hotspots, diag, NOW)
    assert tree_hash(repo) == before_hash

    work = tmp_path / "applied"
    shutil.copytree(repo, work)
    subprocess.run([PATCH, "-p1", "-F0", "--batch", "-s"], input=proposal.diff.encode(), cwd=work, check=True)
    tree = ast.parse((work / "utils" / "reliability.py").read_text())
    defined = {n.name for n in tree.body if isinstance(n, ast.FunctionDef)}
    assert set(CONTRACT_FUNCTIONS) <= defined
    assert not [h for h in scan_hotspots(work) if h.pattern_id == "ungated_toast"]


def test_criterion_09_meta_repair_drill(before_ws):
    cfg = config_for(before_ws, inject_fault="diagnose_rbt")
    result = run_all(cfg)
    m = result.manifest
    assert m.stage is Stage.DIFF_DONE
    assert m.fallback_used
    (thorn,) = m.internal_thorns
    assert thorn.type == "internal.schema_conflict"
    assert len(thorn.suggestions) == 2
    assert "got multiple values for argument 'hours'" in thorn.excerpt
    remediation = (before_ws["out"] / f"remediation_{m.run_id}.md").read_text()
    assert thorn.excerpt in remediation
    assert all(s in remediation for s in thorn.suggestions)
    diag = _diagnosis(before_ws["out"])
    assert diag.fallback is True
    assert diag.top_thorn == "reminder.toast:fail"

    clean = run_all(config_for(before_ws))
    assert clean.manifest.stage is Stage.DIFF_DONE
    assert clean.manifest.fallback_used is False
    assert clean.manifest.internal_thorns == []


def test_criterion_10_determinism(tmp_path):
    outs = []
    for name in ("one", "two"):
        ws = make_workspace(tmp_path / name, "before")
        assert _cli_run_all(ws) == 0
        outs.append(ws["out"])
    for pattern in ("rbt_*.json", "new_prompt.txt", "proposals/patch_*.diff"):
        a, b = (sorted(o.glob(pattern)) for o in outs)
        assert len(a) == len(b) == 1
        assert a[0].name == b[0].name
        assert a[0].read_bytes() == b[0].read_bytes()
