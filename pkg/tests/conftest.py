from __future__ import annotations

import shutil
from datetime import datetime, timezone
from pathlib import Path

import pytest

from vigil.orchestrator import RunConfig
from vigil.robin_sim import simulate

NOW = datetime(2025, 3, 1, 12, 0, 0, tzinfo=timezone.utc)
PATCH = shutil.which("patch")


@pytest.fixture
def now():
    return NOW


def make_workspace(root: Path, preset: str, now: datetime = NOW) -> dict[str, Path]:
    paths = simulate(preset, root, now)
    paths["out"] = root / "output"
    return paths


def config_for(paths: dict[str, Path], now: datetime = NOW, **kw) -> RunConfig:
    return RunConfig(log=paths["log"], prompt=paths["prompt"], repo=paths["repo"], out=paths["out"], now=now, **kw)


@pytest.fixture
def before_ws(tmp_path):
    return make_workspace(tmp_path / "before", "before")


@pytest.fixture
def after_ws(tmp_path):
    return make_workspace(tmp_path / "after", "after")


# -- acceptance report --------------------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    number = int(name.split("_")[2])
    label = " ".join(name.split("_")[3:])
    previous = _ACCEPTANCE.get(number, (label, "PASS"))[1]
    if report.when == "call" or report.outcome == "failed":
        status = "PASS" if report.outcome == "passed" and previous == "PASS" else "FAIL"
        _ACCEPTANCE[number] = (label, status)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        label, status = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{status} criterion {number:2d}: {label}")
