"""ctgcrew: multi-agent orchestration for controlled text generation."""

from .model import (
    Candidate,
    ControlCondition,
    Direction,
    EventKind,
    FeedbackPool,
    Finding,
    IdFactory,
    QualityScore,
    RunLedgerEntry,
    TaskKind,
    TaskSpec,
    quality_of,
    validate_task,
)
from .providers import AgentProfile, BackendConfig, BackendKind, ProviderRuntime, Role

__all__ = [
    "AgentProfile",
    "BackendConfig",
    "BackendKind",
    "Candidate",
    "ControlCondition",
    "Direction",
    "EventKind",
    "FeedbackPool",
    "Finding",
    "IdFactory",
    "ProviderRuntime",
    "QualityScore",
    "Role",
    "RunLedgerEntry",
    "TaskKind",
    "TaskSpec",
    "quality_of",
    "validate_task",
]

__version__ = "0.1.0"
