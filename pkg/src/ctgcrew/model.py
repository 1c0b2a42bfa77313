"""Shared domain types, identifiers, and canonical serialization.

Everything here is an immutable value: frozen dataclasses that are safe to
share between concurrent workers. The ``to_dict``/``from_dict`` pairs define
the canonical snake_case JSON schema used on the wire, in ledger files, and
in run outputs.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from fractions import Fraction
from typing import Any


class TaskKind(str, Enum):
    TOXICITY_MITIGATION = "toxicity_mitigation"
    SENTIMENT_TRANSFORM = "sentiment_transform"
    CHARACTER_REWRITE = "character_rewrite"


class Direction(str, Enum):
    NEG2POS = "neg2pos"
    POS2NEG = "pos2neg"


class EventKind(str, Enum):
    AGENT_CALL = "agent_call"
    AGENT_REPLY = "agent_reply"
    DECISION = "decision"
    METRIC = "metric"
    REVIEW = "review"


class UnknownDimension(Exception):
    """A finding references a dimension_id absent from the condition set."""

    def __init__(self, dimension_id: str):
        self.dimension_id = dimension_id
        super().__init__(f"unknown dimension_id: {dimension_id!r}")


@dataclass(frozen=True)
class ControlCondition:
    """One quality dimension a task must satisfy.

    ``severity_weight`` must lie in (0, 1] and sets the dimension's share of
    the overall quality score.
    """

    dimension_id: str
    description: str
    severity_weight: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "dimension_id": self.dimension_id,
            "description": self.description,
            "severity_weight": self.severity_weight,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ControlCondition":
        return cls(
            dimension_id=d["dimension_id"],
            description=d["description"],
            severity_weight=d["severity_weight"],
        )


@dataclass(frozen=True)
class TaskSpec:
    """A controlled-generation job: what to rewrite and under which conditions."""

    task_id: str
    kind: TaskKind
    original_input: str
    control_conditions: tuple[ControlCondition, ...]
    direction: Direction | None = None
    persona_brief: str | None = None
    word_count_limit: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "kind": self.kind.value,
            "direction": self.direction.value if self.direction else None,
            "control_conditions": [c.to_dict() for c in self.control_conditions],
            "original_input": self.original_input,
            "persona_brief": self.persona_brief,
            "word_count_limit": self.word_count_limit,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TaskSpec":
        return cls(
            task_id=d["task_id"],
            kind=TaskKind(d["kind"]),
            direction=Direction(d["direction"]) if d.get("direction") else None,
            control_conditions=tuple(
                ControlCondition.from_dict(c) for c in d["control_conditions"]
            ),
            original_input=d["original_input"],
            persona_brief=d.get("persona_brief"),
            word_count_limit=d.get("word_count_limit"),
        )


@dataclass(frozen=True)
class Candidate:
    """One generated text with provenance.

    ``round`` strictly increases along any parent chain, so lineage produced
    by crossover/mutation is always acyclic.
    """

    candidate_id: str
    text: str
    round: int
    generator_agent_id: str
    fitness: float | None = None
    parent_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "candidate_id": self.candidate_id,
            "text": self.text,
            "round": self.round,
            "generator_agent_id": self.generator_agent_id,
            "fitness": self.fitness,
            "parent_ids": list(self.parent_ids),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Candidate":
        return cls(
            candidate_id=d["candidate_id"],
            text=d["text"],
            round=d["round"],
            generator_agent_id=d["generator_agent_id"],
            fitness=d.get("fitness"),
            parent_ids=tuple(d.get("parent_ids", ())),
        )


@dataclass(frozen=True)
class DimensionResult:
    passed: bool
    message: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"passed": self.passed, "message": self.message}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DimensionResult":
        return cls(passed=d["passed"], message=d.get("message", ""))


@dataclass(frozen=True)
class QualityScore:
    """Severity-weighted pass fraction over a task's dimensions.

    ``value`` is (sum of weights of passed dimensions) / (sum of all weights)
    and equals 1.0 exactly when every dimension passed.
    """

    value: float
    per_dimension: dict[str, DimensionResult] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "value": self.value,
            "per_dimension": {
                k: v.to_dict() for k, v in sorted(self.per_dimension.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "QualityScore":
        return cls(
            value=d["value"],
            per_dimension={
                k: DimensionResult.from_dict(v)
                for k, v in d.get("per_dimension", {}).items()
            },
        )


@dataclass(frozen=True)
class Finding:
    """One inspector's verdict on one dimension of one candidate."""

    dimension_id: str
    passed: bool
    message: str
    inspector_agent_id: str
    severity_weight: float

    def __post_init__(self):
        if not self.passed and not self.message:
            raise ValueError("failing Finding requires a non-empty message")

    def dedup_key(self) -> tuple[str, str, bool, str]:
        return (self.dimension_id, self.inspector_agent_id, self.passed, self.message)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dimension_id": self.dimension_id,
            "passed": self.passed,
            "message": self.message,
            "inspector_agent_id": self.inspector_agent_id,
            "severity_weight": self.severity_weight,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Finding":
        return cls(
            dimension_id=d["dimension_id"],
            passed=d["passed"],
            message=d.get("message", ""),
            inspector_agent_id=d["inspector_agent_id"],
            severity_weight=d["severity_weight"],
        )


@dataclass(frozen=True)
class FeedbackPool:
    """Aggregated inspection findings for one candidate at one round.

    Ordering is canonical: (dimension_id, inspector_agent_id), so the pool is
    byte-deterministic regardless of the order findings arrived in.
    ``complete`` is False when a provider failure left some dimensions
    uninspected.
    """

    findings: tuple[Finding, ...]
    candidate_id: str
    round: int
    complete: bool = True

    def failing(self) -> tuple[Finding, ...]:
        return tuple(f for f in self.findings if not f.passed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "findings": [f.to_dict() for f in self.findings],
            "candidate_id": self.candidate_id,
            "round": self.round,
            "complete": self.complete,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FeedbackPool":
        return cls(
            findings=tuple(Finding.from_dict(f) for f in d["findings"]),
            candidate_id=d["candidate_id"],
            round=d["round"],
            complete=d.get("complete", True),
        )


@dataclass(frozen=True)
class RunLedgerEntry:
    """One immutable event in a run's append-only trace.

    ``payload`` is a schema-tagged record: a JSON object whose ``schema`` key
    names its shape (e.g. ``agent_call``, ``error``, ``review``). Entries are
    never rewritten once appended.
    """

    sequence_no: int
    timestamp: datetime
    event_kind: EventKind
    payload: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {
            "sequence_no": self.sequence_no,
            "timestamp": self.timestamp.isoformat(),
            "event_kind": self.event_kind.value,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunLedgerEntry":
        return cls(
            sequence_no=d["sequence_no"],
            timestamp=datetime.fromisoformat(d["timestamp"]),
            event_kind=EventKind(d["event_kind"]),
            payload=d["payload"],
        )


def canonical_json(obj: Any) -> str:
    """Stable JSON encoding: sorted keys, tight separators, raw unicode."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def validate_task(spec: TaskSpec) -> list[str]:
    """Check every TaskSpec invariant; return one message per violation.

    Total function: never raises, an empty list means the spec is valid.
    """
    violations: list[str] = []
    if not spec.original_input:
        violations.append("original_input must be non-empty")
    if not spec.control_conditions:
        violations.append("control_conditions must be non-empty")
    if spec.kind == TaskKind.SENTIMENT_TRANSFORM:
        if spec.direction is None:
            violations.append("direction required for sentiment_transform")
    elif spec.direction is not None:
        violations.append("direction only allowed for sentiment_transform")
    if spec.kind == TaskKind.CHARACTER_REWRITE:
        if not spec.persona_brief:
            violations.append("persona_brief required for character_rewrite")
    elif spec.persona_brief is not None:
        violations.append("persona_brief only allowed for character_rewrite")
    if spec.word_count_limit is not None and spec.word_count_limit <= 0:
        violations.append("word_count_limit must be positive")
    seen: set[str] = set()
    for cond in spec.control_conditions:
        if cond.dimension_id in seen:
            violations.append(f"duplicate dimension_id: {cond.dimension_id!r}")
        seen.add(cond.dimension_id)
        if not 0 < cond.severity_weight <= 1:
            violations.append(
                f"severity_weight of {cond.dimension_id!r} must be in (0,1]"
            )
    return violations


def quality_of(
    pool: FeedbackPool, conditions: list[ControlCondition] | tuple[ControlCondition, ...]
) -> QualityScore:
    """Compute the severity-weighted quality score of a candidate's pool.

    A dimension passes iff the pool holds no failing finding for it; a
    dimension with no findings at all therefore counts as passed. Weight
    sums are taken over exact rationals so that all-pass yields 1.0 exactly.

    Raises UnknownDimension if the pool references a dimension_id absent
    from ``conditions``.
    """
    known = {c.dimension_id for c in conditions}
    for finding in pool.findings:
        if finding.dimension_id not in known:
            raise UnknownDimension(finding.dimension_id)

    first_failure: dict[str, str] = {}
    for finding in pool.findings:
        if not finding.passed and finding.dimension_id not in first_failure:
            first_failure[finding.dimension_id] = finding.message

    total = Fraction(0)
    passed_sum = Fraction(0)
    per_dimension: dict[str, DimensionResult] = {}
    for cond in conditions:
        weight = Fraction(cond.severity_weight)
        total += weight
        if cond.dimension_id in first_failure:
            per_dimension[cond.dimension_id] = DimensionResult(
                passed=False, message=first_failure[cond.dimension_id]
            )
        else:
            passed_sum += weight
            per_dimension[cond.dimension_id] = DimensionResult(passed=True)
    value = float(passed_sum / total) if total else 1.0
    return QualityScore(value=value, per_dimension=per_dimension)


class IdFactory:
    """Deterministic opaque-id source.

    Ids are derived from (run seed, allocation counter), so a rerun with the
    same seed allocates the same ids in the same order.
    """

    def __init__(self, seed: int):
        self._seed = seed
        self._counter = 0
        self._lock = threading.Lock()

    def next(self, prefix: str) -> str:
        with self._lock:
            self._counter += 1
            digest = hashlib.sha256(
                f"{self._seed}:{self._counter}".encode()
            ).hexdigest()
        return f"{prefix}-{digest[:12]}"


_LOGICAL_EPOCH = datetime(2000, 1, 1, tzinfo=timezone.utc)


class LogicalClock:
    """Deterministic clock for replayable runs: epoch + one second per tick."""

    def __init__(self):
        self._ticks = 0
        self._lock = threading.Lock()

    def __call__(self) -> datetime:
        with self._lock:
            tick = self._ticks
            self._ticks += 1
        return _LOGICAL_EPOCH + timedelta(seconds=tick)


def system_clock() -> datetime:
    return datetime.now(timezone.utc)
