"""Generate → inspect → revise loop driven by pooled feedback.

Each round the generator produces a candidate, the inspectors pool their
findings, and the loop measures how far the candidate's quality sits from
the configured target. The loop stops once that distance falls within
tolerance or the iteration budget runs out, and always returns the
highest-quality candidate seen.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum
from typing import Any, Sequence

from . import prompts
from .inspection import DECENTRALIZED, InspectionError, inspect_all
from .model import Candidate, FeedbackPool, IdFactory, QualityScore, TaskSpec, quality_of, validate_task
from .providers import AgentProfile, GenerationRequest, ProviderError, ProviderRuntime, Role


class StopReason(str, Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    PROVIDER_ERROR = "provider_error"


@dataclass(frozen=True)
class ReflectionConfig:
    """Loop budget and target.

    ``target_quality`` is the quality standard the loop drives toward;
    ``epsilon`` is the tolerated distance from it (0 means exact).
    """

    max_iterations: int = 4
    target_quality: float = 1.0
    epsilon: float = 0.0
    revision_prompt_template: str = prompts.DEFAULT_REVISION_TEMPLATE
    inspection_topology: str = DECENTRALIZED

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not 0 < self.target_quality <= 1:
            raise ValueError("target_quality must be in (0,1]")
        if not 0 <= self.epsilon < self.target_quality:
            raise ValueError("epsilon must satisfy 0 <= epsilon < target_quality")

    def to_dict(self) -> dict[str, Any]:
        return {
            "max_iterations": self.max_iterations,
            "target_quality": self.target_quality,
            "epsilon": self.epsilon,
            "revision_prompt_template": self.revision_prompt_template,
            "inspection_topology": self.inspection_topology,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ReflectionConfig":
        return cls(
            max_iterations=d.get("max_iterations", 4),
            target_quality=d.get("target_quality", 1.0),
            epsilon=d.get("epsilon", 0.0),
            revision_prompt_template=d.get(
                "revision_prompt_template", prompts.DEFAULT_REVISION_TEMPLATE
            ),
            inspection_topology=d.get("inspection_topology", DECENTRALIZED),
        )


@dataclass(frozen=True)
class ReflectionStep:
    round: int
    candidate: Candidate
    pool: FeedbackPool
    quality: QualityScore
    loss: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "round": self.round,
            "candidate": self.candidate.to_dict(),
            "pool": self.pool.to_dict(),
            "quality": self.quality.to_dict(),
            "loss": self.loss,
        }


@dataclass(frozen=True)
class ReflectionTrace:
    iterations: tuple[ReflectionStep, ...]
    stop_reason: StopReason

    def to_dict(self) -> dict[str, Any]:
        return {
            "iterations": [s.to_dict() for s in self.iterations],
            "stop_reason": self.stop_reason.value,
        }


def _failing_block(pool: FeedbackPool) -> str:
    lines = [f"- {f.dimension_id}: {f.message}" for f in pool.failing()]
    return "\n".join(lines) if lines else "(none)"


def reflect_generate(
    spec: TaskSpec,
    generator: AgentProfile,
    inspectors: Sequence[AgentProfile],
    config: ReflectionConfig,
    runtime: ProviderRuntime | None = None,
    ids: IdFactory | None = None,
) -> tuple[Candidate, ReflectionTrace]:
    """Run the reflection loop and return (best candidate, full trace).

    Round 1 generates from the task alone; later rounds feed the generator
    a revision prompt holding only the failing findings. The loop stops when
    the quality distance drops to ``epsilon`` or the budget is spent. On a
    provider failure the completed rounds are kept and the best of them is
    returned with ``stop_reason = provider_error``.

    Best means maximal quality; ties go to the latest round.
    """
    violations = validate_task(spec)
    if violations:
        raise ValueError(f"invalid task: {violations}")
    if generator.role != Role.GENERATOR:
        raise ValueError(f"agent {generator.agent_id!r} is not a generator")
    runtime = runtime or ProviderRuntime()
    ids = ids or IdFactory(generator.seed or 0)

    steps: list[ReflectionStep] = []
    stop_reason = StopReason.MAX_ITERATIONS
    previous: ReflectionStep | None = None
    for round_no in range(1, config.max_iterations + 1):
        if previous is None:
            prompt = prompts.injection_prompt(spec)
        else:
            prompt = config.revision_prompt_template.format(
                original_input=spec.original_input,
                control_conditions=prompts.conditions_block(spec.control_conditions),
                previous_output=previous.candidate.text,
                pooled_feedback=_failing_block(previous.pool),
            )
        request = GenerationRequest(messages=(("user", prompt),))
        try:
            reply = runtime.generate(generator, request, stage="generation")
        except ProviderError:
            stop_reason = StopReason.PROVIDER_ERROR
            break
        candidate = Candidate(
            candidate_id=ids.next("cand"),
            text=reply.text,
            round=round_no,
            generator_agent_id=generator.agent_id,
        )
        try:
            pool = inspect_all(
                candidate,
                spec.control_conditions,
                inspectors,
                topology=config.inspection_topology,
                runtime=runtime,
            )
        except InspectionError:
            # the partial round is dropped; completed rounds are never lost
            stop_reason = StopReason.PROVIDER_ERROR
            break
        quality = quality_of(pool, spec.control_conditions)
        loss = abs(quality.value - config.target_quality)
        candidate = dataclasses.replace(candidate, fitness=quality.value)
        step = ReflectionStep(
            round=round_no, candidate=candidate, pool=pool, quality=quality, loss=loss
        )
        steps.append(step)
        previous = step
        if runtime.ledger is not None:
            runtime.ledger.decision(
                "reflection",
                round=round_no,
                candidate_id=candidate.candidate_id,
                quality=quality.value,
                loss=loss,
            )
        if loss <= config.epsilon:
            stop_reason = StopReason.CONVERGED
            break

    if not steps:
        raise ProviderError(generator.agent_id, "no reflection round completed")
    best = max(steps, key=lambda s: (s.quality.value, s.round))
    return best.candidate, ReflectionTrace(iterations=tuple(steps), stop_reason=stop_reason)
