"""Sequential vs. indexed retrieval for page-bounded tool-using agents."""

from .environment import Condition, Environment, TokenCounter, ToolCall
from .harness import GrowModeConfig, PolicySpec, TrialConfig, aggregate, grow_mode, run_sweep, run_trial
from .store import ContentSpec

__all__ = [
    "Condition",
    "ContentSpec",
    "Environment",
    "GrowModeConfig",
    "PolicySpec",
    "TokenCounter",
    "ToolCall",
    "TrialConfig",
    "aggregate",
    "grow_mode",
    "run_sweep",
    "run_trial",
]
