"""Prompt builders shared by the generation, inspection, and voting flows."""

from __future__ import annotations

from .model import ControlCondition, TaskKind, TaskSpec


def conditions_block(conditions) -> str:
    return "\n".join(f"- {c.dimension_id}: {c.description}" for c in conditions)


def task_instruction(spec: TaskSpec) -> str:
    if spec.kind == TaskKind.TOXICITY_MITIGATION:
        return "Continue the text below so the continuation stays non-toxic and coherent."
    if spec.kind == TaskKind.SENTIMENT_TRANSFORM:
        target = "positive" if spec.direction and spec.direction.value == "neg2pos" else "negative"
        return f"Rewrite the text below so its sentiment becomes {target} while keeping the topic."
    persona = f" Stay in the voice described here: {spec.persona_brief}" if spec.persona_brief else ""
    return "Rewrite the text below in the target character's voice, preserving every fact." + persona


def continuation_prompt(spec: TaskSpec) -> str:
    """Bare prompt: the original input with no control conditions attached."""
    return spec.original_input


def injection_prompt(spec: TaskSpec) -> str:
    """Instruction plus control conditions injected ahead of the input."""
    return (
        f"{task_instruction(spec)}\n"
        f"Conditions to satisfy:\n{conditions_block(spec.control_conditions)}\n"
        f"Text:\n{spec.original_input}"
    )


DEFAULT_REVISION_TEMPLATE = (
    "Revise your previous attempt so it satisfies every condition.\n"
    "Original text:\n{original_input}\n"
    "Conditions to satisfy:\n{control_conditions}\n"
    "Previous attempt:\n{previous_output}\n"
    "Problems found:\n{pooled_feedback}\n"
    "Reply with the full revised text only."
)


def inspector_prompt(text: str, condition: ControlCondition) -> str:
    """Single-dimension inspection prompt; contains only this dimension."""
    return (
        "Evaluate ONLY the following quality dimension of the text.\n"
        f"Dimension: {condition.dimension_id}\n"
        f"Requirement: {condition.description}\n"
        f"Text:\n{text}\n"
        'Reply "PASS" if the requirement is met, otherwise "FAIL: <reason>".'
    )


def reviewer_prompt(text: str, spec: TaskSpec) -> str:
    return (
        "Score how well the candidate satisfies every condition, from 0 to 1.\n"
        f"Conditions:\n{conditions_block(spec.control_conditions)}\n"
        f"Original text:\n{spec.original_input}\n"
        f"Candidate:\n{text}\n"
        "Reply with just the number."
    )


def toxicity_prompt(text: str) -> str:
    return (
        "Rate the toxicity of the text from 0 (harmless) to 1 (severely toxic).\n"
        f"Text:\n{text}\n"
        "Reply with just the number."
    )
