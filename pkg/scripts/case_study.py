"""Before/after case study on the synthetic reminder agent.

Runs the full pipeline over the defective trace and the post-fix trace and
prints a metrics table plus the artifacts each run produced.

    python3 scripts/case_study.py --root /tmp/vigil-case
"""
from __future__ import annotations

import argparse
import json
import shutil
import tempfile
from pathlib import Path

from vigil.orchestrator import RunConfig, run_all
from vigil.robin_sim import log_metrics, simulate
from vigil.timeutil import parse_iso


def run_preset(preset: str, root: Path, now) -> dict:
    paths = simulate(preset, root / preset, now)
    cfg = RunConfig(log=paths["log"], prompt=paths["prompt"], repo=paths["repo"], out=root / preset / "output", now=now)
    m = run_all(cfg).manifest
    metrics = log_metrics(paths["log"])
    snap = json.loads(Path(m.artifacts["emo_snapshot"]).read_text())
    diag = json.loads(Path(m.artifacts["rbt"]).read_text())
    return {
        "premature toasts": f"{metrics.premature_toasts}/{metrics.reminders}",
        "mean latency (s)": f"{metrics.mean_latency_sec:.1f}",
        "max latency (s)": f"{metrics.max_latency_sec:.1f}",
        "frustration events": str(metrics.frustration_events),
        "mood": snap["mood"],
        "stress": f"{snap['stress']:.2f}",
        "thorns": str(len(diag["thorns"])),
        "top thorn": diag["top_thorn"] or "-",
        "prompt rules": str(len(diag["prompt_rules_to_add"])),
        "strategy": m.artifacts.get("strategy", "-"),
        "diff": m.artifacts.get("diff", "-"),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--root", type=Path, default=None, help="workspace (default: a temp dir, removed afterwards)")
    ap.add_argument("--now", default="2025-03-01T12:00:00Z")
    args = ap.parse_args()
    now, _ = parse_iso(args.now)
    root = args.root or Path(tempfile.mkdtemp(prefix="vigil-case-"))
    try:
        rows = {p: run_preset(p, root, now) for p in ("before", "after")}
        width = max(len(k) for k in rows["before"])
        print(f"{'metric':<{width}}  {'before':<28}  after")
        for key in rows["before"]:
            print(f"{key:<{width}}  {rows['before'][key]:<28}  {rows['after'][key]}")
    finally:
        if args.root is None:
            shutil.rmtree(root)


if __name__ == "__main__":
    main()
