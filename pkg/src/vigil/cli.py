"""Command-line entry point: one subcommand per stage, plus run-all and simulate."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .orchestrator import (
    ConfigError,
    IllegalTransition,
    ManifestIOError,
    RunConfig,
    RunLocked,
    format_summary,
    run_all,
    run_single,
)
from .robin_sim import PRESETS, Scenario, log_metrics, simulate
from .timeutil import parse_iso, utcnow

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ILLEGAL = 2
EXIT_GUARD = 3
EXIT_IO = 4

STAGE_COMMANDS = {
    "update-emobank": "update_emobank",
    "diagnose": "diagnose_rbt",
    "patch-prompt": "build_prompt_patch",
    "propose-diff": "build_code_proposal",
}


def _now(text: str | None):
    if text is None:
        return None
    try:
        ts, _ = parse_iso(text)
    except ValueError as exc:
        raise ConfigError(f"--now is not ISO-8601: {text}") from exc
    return ts


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--log", type=Path, default=Path("logs/events.jsonl"), help="JSONL event log")
    p.add_argument("--prompt", type=Path, default=Path("prompt.txt"), help="agent prompt file")
    p.add_argument("--repo", type=Path, default=Path("."), help="target repository root (read-only)")
    p.add_argument("--out", type=Path, default=Path("output"), help="artifact directory")
    p.add_argument("--bank", type=Path, default=None, help="bank file (default: next to the log)")
    p.add_argument("--now", default=None, help="pinned ISO-8601 clock")
    p.add_argument("--window-hours", type=float, default=24.0)
    p.add_argument("--half-life", type=float, default=12.0, help="decay half-life in hours")
    p.add_argument("--rules", type=Path, default=None, help="JSON appraisal/pattern overrides")
    p.add_argument("--inject-fault", default=None, metavar="STAGE", help="testing only: fail this stage tool")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vigil", description="Reflective supervision pipeline for tool-using agents.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGE_COMMANDS, "run-all"):
        _run_flags(sub.add_parser(name))

    sim = sub.add_parser("simulate", help="write a synthetic trace, fixture repo and prompt")
    sim.add_argument("--preset", choices=sorted(PRESETS), default=None)
    sim.add_argument("--root", type=Path, required=True)
    sim.add_argument("--now", default=None)
    sim.add_argument("--n-reminders", type=int, default=None)
    sim.add_argument("--mean-delay", type=float, default=None)
    sim.add_argument("--max-delay", type=float, default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--post-fix", action="store_true", default=None)
    sim.add_argument("--no-premature", dest="premature", action="store_false", default=None)
    sim.add_argument("--no-mixed-formats", dest="mixed", action="store_false", default=None)
    return parser


def _config(args) -> RunConfig:
    return RunConfig(
        log=args.log,
        prompt=args.prompt,
        repo=args.repo,
        out=args.out,
        now=_now(args.now),
        window_hours=args.window_hours,
        half_life_hours=args.half_life,
        bank=args.bank,
        rules=args.rules,
        inject_fault=args.inject_fault,
    )


def _scenario(args) -> Scenario:
    if args.preset:
        base = PRESETS[args.preset]
    else:
        base = PRESETS["after"] if args.post_fix else Scenario()
    fields = {
        "n_reminders": args.n_reminders,
        "mean_delay_sec": args.mean_delay,
        "max_delay_sec": args.max_delay,
        "seed": args.seed,
        "post_fix": args.post_fix,
        "premature_toasts": args.premature,
        "mix_timestamp_formats": args.mixed,
    }
    merged = {**base.__dict__, **{k: v for k, v in fields.items() if v is not None}}
    try:
        return Scenario(**merged)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _simulate(args) -> int:
    now = _now(args.now) or utcnow()
    paths = simulate(_scenario(args), args.root, now)
    m = log_metrics(paths["log"])
    for key, path in paths.items():
        print(f"{key}: {path}")
    print(
        f"reminders={m.reminders} premature={m.premature_toasts}/{m.reminders} "
        f"mean_latency={m.mean_latency_sec:.1f}s max_latency={m.max_latency_sec:.1f}s"
    )
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            return _simulate(args)
        cfg = _config(args)
        if args.command == "run-all":
            result = run_all(cfg)
        else:
            result = run_single(cfg, STAGE_COMMANDS[args.command])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileExistsError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IllegalTransition as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ILLEGAL
    except (ManifestIOError, RunLocked, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(format_summary(result))
    if result.guard_aborted:
        print("core identity guard aborted the prompt patch; a provisional prompt was written", file=sys.stderr)
        return EXIT_GUARD
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
