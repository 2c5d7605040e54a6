from __future__ import annotations

import statistics
from datetime import timedelta

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from vigil.events import read_events
from vigil.robin_sim import PRESETS, Scenario, build_events, delays_for, log_metrics, simulate

from conftest import NOW


def test_presets_hit_their_targets(tmp_path):
    before = log_metrics(simulate("before", tmp_path / "b", NOW)["log"])
    assert (before.reminders, before.premature_toasts) == (12, 12)
    assert before.mean_latency_sec == pytest.approx(97, abs=1) and before.max_latency_sec == 180
    after = log_metrics(simulate("after", tmp_path / "a", NOW)["log"])
    assert (after.reminders, after.premature_toasts, after.frustration_events) == (12, 0, 0)
    assert after.mean_latency_sec == pytest.approx(8, abs=1)


def test_seeded_output_is_byte_identical(tmp_path):
    a = simulate("before", tmp_path / "a", NOW)
    b = simulate("before", tmp_path / "b", NOW)
    assert a["log"].read_bytes() == b["log"].read_bytes()
    assert a["prompt"].read_bytes() == b["prompt"].read_bytes()


def test_events_fit_the_window(tmp_path):
    events = read_events(simulate("before", tmp_path, NOW)["log"])
    assert len(events) == 36
    assert all(timedelta(0) <= NOW - e.ts <= timedelta(hours=24) for e in events)
    assert any(e.ts_was_naive for e in events) and not all(e.ts_was_naive for e in events)


def test_longest_delay_is_a_fail():
    events = build_events(PRESETS["before"], NOW)
    toasts = [e for e in events if e.kind == "reminder.toast"]
    worst = max(toasts, key=lambda e: e.delay_sec())
    assert worst.status == "fail"
    assert {e.status for e in toasts} == {"fail", "delay"}


def test_empty_scenario(tmp_path):
    paths = simulate(Scenario(n_reminders=0), tmp_path, NOW)
    assert paths["log"].read_text() == ""


def test_invalid_scenarios():
    with pytest.raises(ValueError):
        Scenario(n_reminders=-1)
    with pytest.raises(ValueError):
        Scenario(mean_delay_sec=50, max_delay_sec=10)
    with pytest.raises(ValueError):
        Scenario(post_fix=True)


def test_refuses_non_empty_repo_root(tmp_path):
    (tmp_path / "repo").mkdir()
    (tmp_path / "repo" / "keep.txt").write_text("mine")
    with pytest.raises(FileExistsError):
        simulate("before", tmp_path, NOW)
    assert (tmp_path / "repo" / "keep.txt").read_text() == "mine"


@settings(max_examples=100)
@given(st.integers(2, 40), st.floats(1, 300), st.floats(1, 300), st.integers(0, 10_000))
def test_delay_spread_pins_mean_and_max(n, a, b, seed):
    mean, top = sorted((a, b))
    # both targets are only reachable when the other delays can absorb the peak
    assume(top <= n * mean / 2)
    xs = delays_for(Scenario(n_reminders=n, mean_delay_sec=mean, max_delay_sec=top, seed=seed))
    assert len(xs) == n and all(x >= 0 for x in xs)
    assert max(xs) == pytest.approx(top, abs=0.06)
    assert statistics.fmean(xs) == pytest.approx(mean, abs=0.1)
