"""Reflective supervision for tool-using agents: appraise event logs, keep a decaying
affective memory, diagnose roses/buds/thorns, patch the prompt's adaptive section
and propose code fixes as read-only diffs."""
from __future__ import annotations

from .appraisal import Appraisal, AppraisalRuleTable, appraise_event, episode_id
from .emobank import EmoBank, EmoSnapshot, decayed_intensity
from .events import Event, load_window, parse_event
from .orchestrator import IllegalTransition, RunConfig, RunManifest, Stage, advance, run_all
from .rbt import RbtDiagnosis, classify, diagnose, fallback_diagnose

__version__ = "0.1.0"

__all__ = [
    "Appraisal",
    "AppraisalRuleTable",
    "EmoBank",
    "EmoSnapshot",
    "Event",
    "IllegalTransition",
    "RbtDiagnosis",
    "RunConfig",
    "RunManifest",
    "Stage",
    "advance",
    "appraise_event",
    "classify",
    "decayed_intensity",
    "diagnose",
    "episode_id",
    "fallback_diagnose",
    "load_window",
    "parse_event",
    "run_all",
]
