from __future__ import annotations

import math
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vigil.appraisal import Appraisal
from vigil.emobank import ClockSkewError, DepositKind, EmoBank, EmoSnapshot, decayed_intensity

NOW = datetime(2025, 3, 1, 12, tzinfo=timezone.utc)

# 0.7 * 0.5 ** 0.5, evaluated by hand before the implementation existed
GOLDEN_SIX_HOURS = 0.49497474683058323


def ap(minutes, emotion="frustration", valence=-1.0, intensity=0.9, cause="reminder.toast:fail"):
    return Appraisal(NOW + timedelta(minutes=minutes), emotion, valence, intensity, cause)


def test_decay_golden_values(tmp_path):
    bank = EmoBank(tmp_path / "b.jsonl")
    bank.deposit(ap(0, intensity=0.8))
    bank.deposit(ap(60, emotion="anxiety", valence=-0.6, intensity=0.7, cause="x:delay"))
    eight, seven = bank.logical_entries()
    assert decayed_intensity(eight, NOW + timedelta(hours=12), 12) == pytest.approx(0.4, abs=1e-12)
    assert decayed_intensity(eight, NOW, 12) == 0.8
    assert decayed_intensity(seven, NOW + timedelta(hours=7), 12) == pytest.approx(GOLDEN_SIX_HOURS, abs=1e-12)


def test_clock_skew(tmp_path):
    bank = EmoBank(tmp_path / "b.jsonl")
    bank.deposit(ap(10))
    (le,) = bank.logical_entries()
    with pytest.raises(ClockSkewError):
        decayed_intensity(le, NOW)
    with pytest.raises(ClockSkewError):
        bank.deposit(ap(20), now=NOW)


def test_examples_from_the_policy(tmp_path):
    bank = EmoBank(tmp_path / "b.jsonl")
    bank.deposit(ap(0))
    out = bank.deposit(ap(8, emotion="relief", valence=0.6, intensity=0.35))
    assert out.kind is DepositKind.STORED_WITH_REBOUND
    assert bank.rows[-1].intensity == 0.4 and bank.rows[-1].synthetic

    bank = EmoBank(tmp_path / "noise.jsonl")
    bank.deposit(ap(0, emotion="anxiety", valence=-0.6, intensity=0.5, cause="x:delay"))
    assert bank.deposit(ap(30, emotion="anxiety", valence=-0.6, intensity=0.2, cause="x:delay")).kind is DepositKind.DISCARDED_NOISE

    bank = EmoBank(tmp_path / "co.jsonl")
    first = bank.deposit(ap(0, intensity=0.5))
    second = bank.deposit(ap(3, intensity=0.5))
    assert second.kind is DepositKind.COALESCED and second.prior_id == first.entry_ids[0]
    (le,) = bank.logical_entries()
    assert le.effective_intensity == pytest.approx(0.6)


def test_weak_first_signal_is_noise(tmp_path):
    bank = EmoBank(tmp_path / "b.jsonl")
    assert bank.deposit(ap(0, intensity=0.2)).kind is DepositKind.DISCARDED_NOISE
    assert bank.rows == ()


def test_file_is_append_only(tmp_path):
    path = tmp_path / "b.jsonl"
    bank = EmoBank(path)
    bank.deposit(ap(0))
    before = path.read_bytes()
    bank.deposit(ap(1))
    bank.deposit(ap(30, emotion="relief", valence=0.6, intensity=0.3))
    after = path.read_bytes()
    assert after.startswith(before)
    ids = [r.entry_id for r in EmoBank(path).rows]
    assert ids == list(range(1, len(ids) + 1))


def test_torn_final_line_is_skipped_and_appends_continue(tmp_path):
    path = tmp_path / "b.jsonl"
    bank = EmoBank(path)
    bank.deposit(ap(0))
    with open(path, "a") as fh:
        fh.write('{"ts": "2025-03-01T12:0')
    bank = EmoBank(path)
    assert len(bank.rows) == 1
    bank.deposit(ap(30, emotion="anxiety", valence=-0.6, intensity=0.5, cause="x:delay"))
    assert len(EmoBank(path).rows) == 2


def test_empty_snapshot(tmp_path):
    snap = EmoBank(tmp_path / "b.jsonl").snapshot(NOW)
    assert snap.mood == "neutral"
    assert (snap.stress, snap.energy, snap.motivation, snap.focus) == (0.0, 0.0, 0.0, 0.5)
    assert snap.dominant_emotions == ()


def test_single_frustration_snapshot(tmp_path):
    bank = EmoBank(tmp_path / "b.jsonl")
    bank.deposit(ap(0, intensity=1.0))
    snap = bank.snapshot(NOW)
    assert snap.mood == "frustration"
    assert snap.stress == pytest.approx(0.7)
    assert snap.dominant_emotions == (("frustration", 1.0),)
    assert snap.focus == pytest.approx(0.15)


def test_snapshot_round_trip(tmp_path):
    bank = EmoBank(tmp_path / "b.jsonl")
    bank.deposit(ap(0))
    bank.deposit(ap(30, emotion="curiosity", valence=0.2, intensity=0.3, cause="x:info"))
    snap = bank.snapshot(NOW + timedelta(hours=1))
    assert EmoSnapshot.from_dict(snap.to_dict()) == snap


def test_window_excludes_old_entries(tmp_path):
    bank = EmoBank(tmp_path / "b.jsonl")
    bank.deposit(ap(0))
    assert bank.snapshot(NOW + timedelta(hours=25)).mood == "neutral"
    assert bank.top_cause(NOW + timedelta(hours=25)) is None
    assert bank.top_cause(NOW + timedelta(hours=1)) == "reminder.toast:fail"


# -- replay oracle ------------------------------------------------------------------


def _sign(x):
    return (x > 0) - (x < 0)


def replay(appraisals):
    """Straight-line restatement of the deposit policy over plain dicts."""
    rows, kinds = [], []
    for a in appraisals:
        prior = rows[-1] if rows else None
        if a.intensity < 0.25:
            same = [r for r in rows if r["cause"] == a.cause]
            if not same or _sign(same[-1]["valence"]) == _sign(a.valence):
                kinds.append("discarded_noise")
                continue
        gap = a.ts - prior["ts"] if prior else None
        if prior and prior["emotion"] == a.emotion and prior["cause"] == a.cause and timedelta(0) <= gap <= timedelta(minutes=5):
            root = prior["root"] or prior["id"]
            rows.append(dict(id=len(rows) + 1, ts=a.ts, emotion=a.emotion, valence=a.valence,
                             intensity=a.intensity, cause=a.cause, root=root, synthetic=False))
            kinds.append("coalesced")
            continue
        rows.append(dict(id=len(rows) + 1, ts=a.ts, emotion=a.emotion, valence=a.valence,
                         intensity=a.intensity, cause=a.cause, root=None, synthetic=False))
        if a.valence > 0 and prior and prior["valence"] < 0 and timedelta(0) <= gap <= timedelta(minutes=10):
            rows.append(dict(id=len(rows) + 1, ts=a.ts, emotion="determination", valence=0.4,
                             intensity=0.4 if prior["intensity"] >= 0.6 else 0.3,
                             cause=a.cause, root=None, synthetic=True))
            kinds.append("stored_with_rebound")
        else:
            kinds.append("stored")
    effective = {}
    for r in rows:
        if r["root"] is None:
            boosts = sum(1 for x in rows if x["root"] == r["id"])
            effective[r["id"]] = min(1.0, r["intensity"] + 0.1 * boosts)
    return rows, kinds, effective


SIGNALS = st.sampled_from([
    ("frustration", -1.0), ("anxiety", -0.6), ("relief", 0.6), ("curiosity", 0.2), ("joy", 0.6),
])


@st.composite
def appraisal_streams(draw):
    n = draw(st.integers(0, 25))
    t = NOW
    out = []
    for _ in range(n):
        t += timedelta(seconds=draw(st.integers(0, 15 * 60)))
        emotion, valence = draw(SIGNALS)
        intensity = draw(st.sampled_from([0.1, 0.2, 0.25, 0.3, 0.5, 0.59, 0.6, 0.9, 1.0]))
        cause = draw(st.sampled_from(["a:fail", "b:ok"]))
        out.append(Appraisal(t, emotion, valence, intensity, cause))
    return out


@settings(max_examples=300, deadline=None)
@given(appraisal_streams())
def test_bank_matches_replay_oracle(tmp_path_factory, stream):
    path = tmp_path_factory.mktemp("bank") / "b.jsonl"
    bank = EmoBank(path)
    kinds = [bank.deposit(a).kind.value for a in stream]
    rows, want_kinds, effective = replay(stream)
    assert kinds == want_kinds
    got = [(r.entry_id, r.emotion, r.valence, r.intensity, r.cause, r.coalesced_with, r.synthetic) for r in bank.rows]
    assert got == [(r["id"], r["emotion"], r["valence"], r["intensity"], r["cause"], r["root"], r["synthetic"]) for r in rows]

    # read path from disk agrees with the oracle and with the incremental tracker
    reopened = EmoBank(path)
    read = {le.entry_id: le.effective_intensity for le in reopened.logical_entries()}
    assert read == pytest.approx(effective)
    assert bank.tracked_intensities() == pytest.approx(effective)


@settings(max_examples=200, deadline=None)
@given(appraisal_streams(), st.floats(0, 30))
def test_snapshot_invariants(tmp_path_factory, stream, hours_later):
    bank = EmoBank(tmp_path_factory.mktemp("bank") / "b.jsonl")
    for a in stream:
        bank.deposit(a)
    now = (stream[-1].ts if stream else NOW) + timedelta(hours=hours_later)
    snap = bank.snapshot(now)
    for v in (snap.energy, snap.stress, snap.motivation, snap.focus):
        assert 0.0 <= v <= 1.0
    masses = [m for _, m in snap.dominant_emotions]
    assert masses == sorted(masses, reverse=True) and len(masses) <= 3
    if snap.dominant_emotions:
        assert snap.mood == snap.dominant_emotions[0][0]
    else:
        assert snap.mood == "neutral"


@given(st.floats(0.01, 1.0), st.floats(0.1, 100), st.floats(0, 500))
def test_decay_matches_closed_form(tmp_path_factory, intensity, half_life, hours):
    bank = EmoBank(tmp_path_factory.mktemp("bank") / "b.jsonl")
    bank.deposit(ap(0, intensity=max(intensity, 0.25)))
    (le,) = bank.logical_entries()
    got = decayed_intensity(le, NOW + timedelta(hours=hours), half_life)
    elapsed = (timedelta(hours=hours) / timedelta(microseconds=1)) / 3.6e9
    assert math.isclose(got, le.intensity * 0.5 ** (elapsed / half_life), rel_tol=1e-12)


def test_eight_high_negative_entries(tmp_path):
    bank = EmoBank(tmp_path / "b.jsonl")
    for i in range(8):
        emotion, valence = (("frustration", -1.0), ("anxiety", -0.6))[i % 2]
        bank.deposit(ap(15 * i, emotion=emotion, valence=valence, intensity=0.7 + 0.04 * i, cause=f"x:{emotion}"))
    snap = bank.snapshot(NOW + timedelta(hours=2))
    assert snap.stress > 0.9
    assert snap.mood in {"frustration", "anxiety"}
