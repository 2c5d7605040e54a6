"""Inject a fault into each stage tool in turn and report how the run degraded.

    python3 scripts/fault_drill.py
"""
from __future__ import annotations

import argparse
import shutil
import tempfile
from pathlib import Path

from vigil.orchestrator import TOOL_ORDER, RunConfig, run_all
from vigil.robin_sim import simulate
from vigil.timeutil import parse_iso


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--now", default="2025-03-01T12:00:00Z")
    args = ap.parse_args()
    now, _ = parse_iso(args.now)
    root = Path(tempfile.mkdtemp(prefix="vigil-drill-"))
    try:
        for tool in (None, *TOOL_ORDER):
            ws = root / (tool or "clean")
            paths = simulate("before", ws, now)
            cfg = RunConfig(log=paths["log"], prompt=paths["prompt"], repo=paths["repo"],
                            out=ws / "output", now=now, inject_fault=tool)
            result = run_all(cfg)
            m = result.manifest
            kinds = ",".join(t.type for t in m.internal_thorns) or "-"
            notes = len(list((ws / "output").glob("remediation_*.md")))
            print(f"fault={tool or 'none':<20} stage={m.stage.value:<10} fallback={str(m.fallback_used).lower():<5} "
                  f"thorns={kinds:<26} remediation_notes={notes} strategy={m.artifacts.get('strategy')}")
    finally:
        shutil.rmtree(root)


if __name__ == "__main__":
    main()
