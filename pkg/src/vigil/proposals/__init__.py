from .diffs import FileEdit, PatchApplyError, apply_diff, render_diff
from .engine import (
    PatchProposal,
    ProposalError,
    Reasoner,
    generate_proposal,
    get_reasoner,
    persist_proposal,
    register_reasoner,
    select_strategy,
    snapshot_repo,
)
from .scanner import DEFAULT_RULES, Hotspot, PatternRule, load_rules, scan_hotspots, tree_hash
from .strategies import RepoSnapshot, RetryErrorsStrategy, Strategy, TZReceiptStrategy, default_registry
from .templates import CONTRACT_FUNCTIONS

__all__ = [
    "CONTRACT_FUNCTIONS",
    "DEFAULT_RULES",
    "FileEdit",
    "Hotspot",
    "PatchApplyError",
    "PatchProposal",
    "PatternRule",
    "ProposalError",
    "Reasoner",
    "RepoSnapshot",
    "RetryErrorsStrategy",
    "Strategy",
    "TZReceiptStrategy",
    "apply_diff",
    "default_registry",
    "generate_proposal",
    "get_reasoner",
    "load_rules",
    "persist_proposal",
    "register_reasoner",
    "render_diff",
    "scan_hotspots",
    "select_strategy",
    "snapshot_repo",
    "tree_hash",
]
