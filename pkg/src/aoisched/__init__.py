"""Index-based threshold scheduling for remote inference over a two-way
Markov-delay channel."""

from .channel import ChannelModel, DelayPMF, reference_channel, symmetric_two_state
from .config import ExperimentConfig
from .error_model import ARModel, ErrorCurve, inference_error_curve, reference_ar_model
from .errors import (
    AoischedError,
    ArtifactMismatchError,
    BracketError,
    ChannelError,
    ConfigError,
    EnumerationLimitError,
    NonStationaryError,
    NotConvergedError,
    WaitingCapExceeded,
)
from .oracle import TruncatedSMDP, greedy_matches_threshold, relative_value_iteration
from .policy import BufferMapping, PolicyContext, ThresholdPolicy, optimal_policy, optimize_mapping, solve_threshold
from .simulator import PolicyKind, ThresholdRule, replay_trace, run_simulation, run_sweep

__all__ = [
    "ARModel",
    "AoischedError",
    "ArtifactMismatchError",
    "BracketError",
    "BufferMapping",
    "ChannelError",
    "ChannelModel",
    "ConfigError",
    "DelayPMF",
    "EnumerationLimitError",
    "ErrorCurve",
    "ExperimentConfig",
    "NonStationaryError",
    "NotConvergedError",
    "PolicyContext",
    "PolicyKind",
    "ThresholdPolicy",
    "ThresholdRule",
    "TruncatedSMDP",
    "WaitingCapExceeded",
    "greedy_matches_threshold",
    "inference_error_curve",
    "optimal_policy",
    "optimize_mapping",
    "reference_ar_model",
    "reference_channel",
    "relative_value_iteration",
    "replay_trace",
    "run_simulation",
    "run_sweep",
    "solve_threshold",
    "symmetric_two_state",
]
