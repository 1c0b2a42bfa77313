"""Persona prompt enrichment validated by free performance.

A prompt engineer expands a short persona brief into a detailed
description; a blank agent carrying only that description improvises a
batch of utterances; an evaluator classifies each utterance as consistent
or not with the original brief. The enriched description is accepted once
the consistency rate clears the configured threshold, with a bounded number
of attempts. Failed attempts feed their inconsistent utterances back to the
engineer as counterexamples.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Sequence

from .providers import AgentProfile, GenerationRequest, ProviderError, ProviderRuntime, Role

CONSISTENT = "consistent"
INCONSISTENT = "inconsistent"

_PERFORMANCE_CUE = "Improvise one short statement, fully in character."


class InsufficientPerformances(Exception):
    """Fewer utterances were produced than the requested batch size."""


@dataclass(frozen=True)
class PersonaProfile:
    brief: str
    sample_utterances: tuple[str, ...] = ()
    enriched: str | None = None
    consistency_rate: float | None = None
    attempts: int = 0
    met_threshold: bool | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "brief": self.brief,
            "sample_utterances": list(self.sample_utterances),
            "enriched": self.enriched,
            "consistency_rate": self.consistency_rate,
            "attempts": self.attempts,
            "met_threshold": self.met_threshold,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PersonaProfile":
        return cls(
            brief=d["brief"],
            sample_utterances=tuple(d.get("sample_utterances", ())),
            enriched=d.get("enriched"),
            consistency_rate=d.get("consistency_rate"),
            attempts=d.get("attempts", 0),
            met_threshold=d.get("met_threshold"),
        )


@dataclass(frozen=True)
class AutoPromptConfig:
    performances_k: int = 8
    acceptance_threshold: float = 0.75
    max_attempts: int = 3

    def __post_init__(self):
        if self.performances_k < 1:
            raise ValueError("performances_k must be positive")
        if not 0 < self.acceptance_threshold <= 1:
            raise ValueError("acceptance_threshold must be in (0,1]")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "performances_k": self.performances_k,
            "acceptance_threshold": self.acceptance_threshold,
            "max_attempts": self.max_attempts,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AutoPromptConfig":
        return cls(
            performances_k=d.get("performances_k", 8),
            acceptance_threshold=d.get("acceptance_threshold", 0.75),
            max_attempts=d.get("max_attempts", 3),
        )


def persona_name(brief: str) -> str | None:
    """Best-effort persona name: a quoted span, else a Title-Case word run."""
    match = re.search(r'["“]([^"”]+)["”]', brief)
    if match:
        return match.group(1)
    match = re.search(r"\b([A-Z][a-z]+(?:\s+[A-Z][a-z]+)+)\b", brief)
    if match:
        return match.group(1)
    return None


def enrich_persona(
    p: PersonaProfile,
    prompt_engineer: AgentProfile,
    runtime: ProviderRuntime | None = None,
    counterexamples: Sequence[str] = (),
) -> str:
    """Expand the brief into a detailed persona description.

    The result always mentions the persona's name when the brief names one;
    replies that drop it are prefixed with the name. ``counterexamples``
    carries utterances a previous attempt got wrong, so the engineer can
    steer away from them.
    """
    if not p.brief:
        raise ValueError("persona brief must be non-empty")
    samples = "\n".join(f"- {u}" for u in p.sample_utterances) or "(none)"
    prompt = (
        "Write a complete, detailed persona description from this brief.\n"
        f"Brief: {p.brief}\n"
        f"Example statements:\n{samples}\n"
    )
    if counterexamples:
        bad = "\n".join(f"- {u}" for u in counterexamples)
        prompt += (
            "A previous description led to these off-character statements; "
            f"make the new description rule them out:\n{bad}\n"
        )
    prompt += "Reply with the description only."
    runtime = runtime or ProviderRuntime()
    request = GenerationRequest(messages=(("user", prompt),))
    reply = runtime.generate(prompt_engineer, request, stage="autoprompt")
    enriched = reply.text.strip()
    name = persona_name(p.brief)
    if name and name not in enriched:
        enriched = f"{name}: {enriched}"
    return enriched


def free_performance(
    enriched: str,
    actor: AgentProfile,
    k: int,
    runtime: ProviderRuntime | None = None,
    seeds: Sequence[int] | None = None,
) -> list[str]:
    """Let a blank agent improvise ``k`` utterances from the enriched persona.

    The performing agent is rebuilt fresh: its only system prompt is the
    enriched description, so no task input or feedback can leak into the
    performance. Each draw uses its own seed; a failed draw is retried once
    and then skipped. Fewer than ``k`` utterances raise
    InsufficientPerformances.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    runtime = runtime or ProviderRuntime()
    base_seed = actor.seed or 0
    draw_seeds = list(seeds) if seeds is not None else [base_seed + i for i in range(k)]
    blank = AgentProfile(
        agent_id=actor.agent_id,
        role=Role.PERSONA_ACTOR,
        backend=actor.backend,
        system_prompt=enriched,
        temperature=actor.temperature,
        seed=actor.seed,
    )
    utterances: list[str] = []
    for draw_seed in draw_seeds:
        if len(utterances) == k:
            break
        request = GenerationRequest(
            messages=(("user", _PERFORMANCE_CUE),), seed=draw_seed
        )
        for attempt in range(2):
            try:
                reply = runtime.generate(blank, request, stage="autoprompt")
            except ProviderError:
                continue
            if reply.text:
                utterances.append(reply.text)
            break
    if len(utterances) < k:
        raise InsufficientPerformances(
            f"only {len(utterances)} of {k} performances completed"
        )
    return utterances


def evaluate_consistency(
    utterances: Sequence[str],
    brief: str,
    evaluator: AgentProfile,
    runtime: ProviderRuntime | None = None,
) -> Fraction:
    """Fraction of utterances the evaluator classifies as on-persona.

    Exact rational arithmetic; a failed classification counts as
    inconsistent (conservative) and leaves a ledger warning.
    """
    rate, _ = _evaluate_with_failures(utterances, brief, evaluator, runtime)
    return rate


def _evaluate_with_failures(
    utterances: Sequence[str],
    brief: str,
    evaluator: AgentProfile,
    runtime: ProviderRuntime | None,
) -> tuple[Fraction, list[str]]:
    if not utterances:
        raise ValueError("no utterances to evaluate")
    runtime = runtime or ProviderRuntime()
    consistent = 0
    inconsistent: list[str] = []
    for utterance in utterances:
        text = f"Persona: {brief}\nStatement: {utterance}"
        try:
            label, _ = runtime.classify(
                evaluator, text, (CONSISTENT, INCONSISTENT), stage="autoprompt"
            )
        except ProviderError:
            label = INCONSISTENT
            if runtime.ledger is not None:
                runtime.ledger.decision(
                    "autoprompt", warning="consistency_check_error"
                )
        if label == CONSISTENT:
            consistent += 1
        else:
            inconsistent.append(utterance)
    return Fraction(consistent, len(utterances)), inconsistent


def autoprompt(
    p: PersonaProfile,
    cfg: AutoPromptConfig,
    prompt_engineer: AgentProfile,
    actor: AgentProfile,
    evaluator: AgentProfile,
    runtime: ProviderRuntime | None = None,
) -> PersonaProfile:
    """Run enrich → perform → evaluate until the threshold is met.

    Returns the first attempt whose consistency rate reaches the acceptance
    threshold, else the best attempt of the budget flagged as
    ``met_threshold=False``. Errors propagate only when not a single
    attempt completed.
    """
    runtime = runtime or ProviderRuntime()
    attempts: list[tuple[Fraction, str]] = []
    counterexamples: list[str] = []
    error: Exception | None = None
    for attempt_no in range(1, cfg.max_attempts + 1):
        try:
            enriched = enrich_persona(p, prompt_engineer, runtime, counterexamples)
            utterances = free_performance(enriched, actor, cfg.performances_k, runtime)
            rate, failing = _evaluate_with_failures(utterances, p.brief, evaluator, runtime)
        except (ProviderError, InsufficientPerformances) as exc:
            error = exc
            break
        attempts.append((rate, enriched))
        if runtime.ledger is not None:
            runtime.ledger.decision(
                "autoprompt",
                attempt=attempt_no,
                consistency_rate=float(rate),
                accepted=rate >= Fraction(cfg.acceptance_threshold),
            )
        if rate >= Fraction(cfg.acceptance_threshold):
            return dataclasses.replace(
                p,
                enriched=enriched,
                consistency_rate=float(rate),
                attempts=attempt_no,
                met_threshold=True,
            )
        counterexamples = failing
    if not attempts:
        raise error if error is not None else RuntimeError("no autoprompt attempt ran")
    best_rate, best_enriched = max(attempts, key=lambda pair: pair[0])
    return dataclasses.replace(
        p,
        enriched=best_enriched,
        consistency_rate=float(best_rate),
        attempts=len(attempts),
        met_threshold=False,
    )
