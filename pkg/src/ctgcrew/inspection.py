"""Multi-dimension quality inspection with lossless feedback pooling.

The decentralized topology runs one isolated inspector call per
(dimension, inspector) pair and merges the findings with a deterministic
pool: no summarizing agent sits between inspectors and the pool, so no
finding can be lost in transit. The centralized-chain topology is also
provided for comparison: there, verdicts travel through a chain of
summaries and the final agent emits whatever survived.
"""

from __future__ import annotations

import re
from typing import Sequence

from . import prompts
from .model import Candidate, ControlCondition, FeedbackPool, Finding
from .providers import AgentProfile, GenerationRequest, ProviderError, ProviderRuntime, Role

WORD_COUNT_DIMENSION = "word_count"

DECENTRALIZED = "decentralized"
CENTRALIZED_CHAIN = "centralized_chain"
WHOLE_TEXT = "whole_text"


class InspectionError(Exception):
    """Inspection failed; carries the partial pool assembled before failure."""

    def __init__(
        self,
        message: str,
        dimension_id: str | None = None,
        partial_pool: FeedbackPool | None = None,
    ):
        self.dimension_id = dimension_id
        self.partial_pool = partial_pool
        super().__init__(message)


def _parse_verdict(reply_text: str) -> tuple[bool, str]:
    # Anything that is not an explicit PASS counts as a failure (conservative).
    text = reply_text.strip()
    lowered = text.lower()
    if lowered.startswith("pass"):
        return True, ""
    if lowered.startswith("fail"):
        _, _, message = text.partition(":")
        return False, message.strip() or text
    return False, text or "unparseable inspector reply"


def _word_count_finding(
    candidate: Candidate, condition: ControlCondition, inspector_id: str
) -> Finding | None:
    """Built-in deterministic counter for the word_count dimension.

    The limit is the first integer in the condition description; whitespace
    tokenization defines the count.
    """
    match = re.search(r"\d+", condition.description)
    if match is None:
        return None
    limit = int(match.group(0))
    count = len(candidate.text.split())
    if count > limit:
        return Finding(
            dimension_id=condition.dimension_id,
            passed=False,
            message=f"word count {count} exceeds limit {limit}",
            inspector_agent_id=inspector_id,
            severity_weight=condition.severity_weight,
        )
    return Finding(
        dimension_id=condition.dimension_id,
        passed=True,
        message="",
        inspector_agent_id=inspector_id,
        severity_weight=condition.severity_weight,
    )


def inspect_dimension(
    candidate: Candidate,
    condition: ControlCondition,
    inspector: AgentProfile,
    runtime: ProviderRuntime,
) -> Finding:
    """Inspect one candidate against exactly one dimension.

    The inspector sees only this dimension's description; isolating
    dimensions is what keeps judgments focused. Provider errors propagate
    tagged with the dimension id.
    """
    if inspector.role != Role.INSPECTOR:
        raise ValueError(f"agent {inspector.agent_id!r} is not an inspector")
    if condition.dimension_id == WORD_COUNT_DIMENSION:
        builtin = _word_count_finding(candidate, condition, inspector.agent_id)
        if builtin is not None:
            return builtin
    request = GenerationRequest(
        messages=(("user", prompts.inspector_prompt(candidate.text, condition)),),
        temperature=0.0,
    )
    try:
        reply = runtime.generate(inspector, request, stage="inspection")
    except ProviderError as exc:
        raise InspectionError(
            f"dimension {condition.dimension_id!r}: {exc}",
            dimension_id=condition.dimension_id,
        ) from exc
    passed, message = _parse_verdict(reply.text)
    return Finding(
        dimension_id=condition.dimension_id,
        passed=passed,
        message=message,
        inspector_agent_id=inspector.agent_id,
        severity_weight=condition.severity_weight,
    )


def pool_feedback(
    findings: Sequence[Finding],
    candidate_id: str = "",
    round: int = 0,
    complete: bool = True,
) -> FeedbackPool:
    """Aggregate findings without any summarizing agent.

    Exact repeats collapse to one finding; if one inspector somehow reports
    the same dimension twice with different content, the failing verdict
    wins. The result is sorted canonically by (dimension_id, inspector), so
    pooling is independent of arrival order.
    """
    by_pair: dict[tuple[str, str], Finding] = {}
    for finding in findings:
        key = (finding.dimension_id, finding.inspector_agent_id)
        current = by_pair.get(key)
        if current is None or (current.passed and not finding.passed):
            by_pair[key] = finding
    ordered = tuple(
        sorted(by_pair.values(), key=lambda f: (f.dimension_id, f.inspector_agent_id))
    )
    return FeedbackPool(
        findings=ordered, candidate_id=candidate_id, round=round, complete=complete
    )


def inspect_all(
    candidate: Candidate,
    conditions: Sequence[ControlCondition],
    inspectors: Sequence[AgentProfile],
    topology: str = DECENTRALIZED,
    runtime: ProviderRuntime | None = None,
) -> FeedbackPool:
    """Inspect a candidate across all dimensions under the chosen topology.

    decentralized: fan out one isolated call per (dimension, inspector) and
    pool everything. centralized_chain: thread a running summary through
    the inspectors, one dimension at a time; the final agent's summary is
    parsed into the pool (lossy by construction, kept for comparison).
    whole_text: a single agent checks every dimension in one call.

    On provider failure the first error propagates as InspectionError; the
    findings gathered up to that point are pooled onto the exception with
    ``complete=False``.
    """
    runtime = runtime or ProviderRuntime()
    if topology == DECENTRALIZED:
        if not inspectors:
            raise ValueError("decentralized inspection needs at least one inspector")
        tasks = [(cond, insp) for cond in conditions for insp in inspectors]

        def one(task):
            cond, insp = task
            try:
                return inspect_dimension(candidate, cond, insp, runtime)
            except InspectionError as exc:
                return exc

        results = runtime.fan_out(one, tasks)
        findings = [r for r in results if isinstance(r, Finding)]
        errors = [r for r in results if isinstance(r, InspectionError)]
        if errors:
            partial = pool_feedback(
                findings, candidate.candidate_id, candidate.round, complete=False
            )
            first = errors[0]
            raise InspectionError(
                str(first), dimension_id=first.dimension_id, partial_pool=partial
            ) from first
        return pool_feedback(findings, candidate.candidate_id, candidate.round)

    if topology == CENTRALIZED_CHAIN:
        if len(inspectors) < 2:
            raise ValueError("centralized_chain needs at least 2 agents")
        return _inspect_chain(candidate, conditions, inspectors, runtime)

    if topology == WHOLE_TEXT:
        if not inspectors:
            raise ValueError("whole_text inspection needs one inspector")
        return inspect_whole_text(candidate, conditions, inspectors[0], runtime)

    raise ValueError(f"unknown topology: {topology!r}")


def _chain_prompt(
    candidate: Candidate,
    condition: ControlCondition,
    summary: str,
    step: int,
    total: int,
) -> str:
    return (
        f"You are inspection agent {step + 1} of {total} in a chain.\n"
        f"Findings so far:\n{summary or '(none)'}\n"
        f"Now evaluate dimension {condition.dimension_id}: {condition.description}\n"
        f"Text:\n{candidate.text}\n"
        f'Add one line "PASS {condition.dimension_id}" or '
        f'"FAIL {condition.dimension_id}: <reason>" and reply with the complete '
        "updated findings summary."
    )


def _inspect_chain(
    candidate: Candidate,
    conditions: Sequence[ControlCondition],
    inspectors: Sequence[AgentProfile],
    runtime: ProviderRuntime,
) -> FeedbackPool:
    summary = ""
    final_agent = inspectors[(len(conditions) - 1) % len(inspectors)]
    for step, condition in enumerate(conditions):
        agent = inspectors[step % len(inspectors)]
        request = GenerationRequest(
            messages=(
                ("user", _chain_prompt(candidate, condition, summary, step, len(conditions))),
            ),
            temperature=0.0,
        )
        try:
            summary = runtime.generate(agent, request, stage="inspection").text
        except ProviderError as exc:
            partial = _parse_summary(
                summary, conditions, agent.agent_id, candidate, complete=False
            )
            raise InspectionError(
                f"chain step for {condition.dimension_id!r}: {exc}",
                dimension_id=condition.dimension_id,
                partial_pool=partial,
            ) from exc
    return _parse_summary(summary, conditions, final_agent.agent_id, candidate)


def _parse_summary(
    summary: str,
    conditions: Sequence[ControlCondition],
    emitter_id: str,
    candidate: Candidate,
    complete: bool | None = None,
) -> FeedbackPool:
    """Turn a chain/whole-text summary into findings, one line per verdict."""
    by_dim = {c.dimension_id: c for c in conditions}
    findings: list[Finding] = []
    seen: set[str] = set()
    for line in summary.splitlines():
        match = re.match(r"(PASS|FAIL)\s+([\w.-]+)\s*:?\s*(.*)$", line.strip())
        if match is None:
            continue
        verdict, dim, message = match.group(1), match.group(2), match.group(3)
        if dim not in by_dim or dim in seen:
            continue
        seen.add(dim)
        failed = verdict == "FAIL"
        findings.append(
            Finding(
                dimension_id=dim,
                passed=not failed,
                message=(message.strip() or "failed") if failed else "",
                inspector_agent_id=emitter_id,
                severity_weight=by_dim[dim].severity_weight,
            )
        )
    if complete is None:
        complete = seen == set(by_dim)
    return pool_feedback(findings, candidate.candidate_id, candidate.round, complete=complete)


def inspect_whole_text(
    candidate: Candidate,
    conditions: Sequence[ControlCondition],
    inspector: AgentProfile,
    runtime: ProviderRuntime,
) -> FeedbackPool:
    """One agent, one call, all dimensions at once."""
    if inspector.role != Role.INSPECTOR:
        raise ValueError(f"agent {inspector.agent_id!r} is not an inspector")
    prompt = (
        "Evaluate the text against every dimension below.\n"
        f"{prompts.conditions_block(conditions)}\n"
        f"Text:\n{candidate.text}\n"
        'For each dimension reply one line: "PASS <dimension>" or '
        '"FAIL <dimension>: <reason>".'
    )
    request = GenerationRequest(messages=(("user", prompt),), temperature=0.0)
    try:
        reply = runtime.generate(inspector, request, stage="inspection")
    except ProviderError as exc:
        raise InspectionError(f"whole-text inspection: {exc}") from exc
    return _parse_summary(reply.text, conditions, inspector.agent_id, candidate)
