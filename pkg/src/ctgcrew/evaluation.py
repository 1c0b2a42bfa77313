"""Metric suite over candidate sets: toxicity, success, perplexity, relevance.

All metrics run through pluggable backends (judge, classifier, scorer,
embedder) and produce MetricReports whose aggregate is the arithmetic mean
of the per-item values. The human-review tally turns reviewer verdicts into
exact adoption rates.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from fractions import Fraction
from typing import Any, Sequence

from . import prompts
from .model import EventKind
from .providers import AgentProfile, GenerationRequest, ProviderError, ProviderRuntime, Role


class MetricName(str, Enum):
    TOXICITY = "toxicity"
    SUCCESS = "success"
    PERPLEXITY = "perplexity"
    RELEVANCE = "relevance"


class ScorerUnsupported(Exception):
    """The configured backend returns no token log-probabilities."""


class DegenerateEmbedding(Exception):
    """An embedding came back as the zero vector; cosine is undefined."""


class EmptyBatch(Exception):
    pass


class DuplicateReview(Exception):
    def __init__(self, candidate_id: str, reviewer_id: str):
        self.candidate_id = candidate_id
        self.reviewer_id = reviewer_id
        super().__init__(f"duplicate review of {candidate_id!r} by {reviewer_id!r}")


SENTIMENT_LABELS = ("positive", "negative", "neutral")

_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")


@dataclass(frozen=True)
class MetricReport:
    metric: MetricName
    per_item: tuple[tuple[str, float], ...]
    aggregate: float
    aggregation: str = "mean"
    coverage: float = 1.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric.value,
            "per_item": [[cid, value] for cid, value in self.per_item],
            "aggregate": self.aggregate,
            "aggregation": self.aggregation,
            "coverage": self.coverage,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "MetricReport":
        return cls(
            metric=MetricName(d["metric"]),
            per_item=tuple((cid, value) for cid, value in d["per_item"]),
            aggregate=d["aggregate"],
            aggregation=d.get("aggregation", "mean"),
            coverage=d.get("coverage", 1.0),
        )


def _make_report(
    metric: MetricName,
    items: list[tuple[str, float]],
    runtime: ProviderRuntime | None,
    coverage: float = 1.0,
) -> MetricReport:
    items = sorted(items, key=lambda pair: pair[0])
    aggregate = math.fsum(v for _, v in items) / len(items) if items else 0.0
    report = MetricReport(
        metric=metric,
        per_item=tuple(items),
        aggregate=aggregate,
        coverage=coverage,
    )
    if runtime is not None and runtime.ledger is not None:
        runtime.ledger.append(
            EventKind.METRIC,
            {"schema": "metric", "stage": "evaluation", "report": report.to_dict()},
        )
    return report


def toxicity(
    texts: Sequence[tuple[str, str]],
    judge: AgentProfile,
    runtime: ProviderRuntime | None = None,
) -> MetricReport:
    """Judge-scored toxicity in [0,1] per text, mean-aggregated.

    Items whose judge reply holds no parseable number are skipped with a
    ledger warning; ``coverage`` records the parsed fraction.
    """
    if judge.role != Role.JUDGE:
        raise ValueError(f"agent {judge.agent_id!r} is not a judge")
    if not texts:
        raise EmptyBatch("no texts to judge")
    runtime = runtime or ProviderRuntime()
    items: list[tuple[str, float]] = []
    for candidate_id, text in texts:
        request = GenerationRequest(
            messages=(("user", prompts.toxicity_prompt(text)),), temperature=0.0
        )
        reply = runtime.generate(judge, request, stage="evaluation")
        match = _NUMBER_RE.search(reply.text)
        if match is None:
            if runtime.ledger is not None:
                runtime.ledger.decision(
                    "evaluation",
                    warning="unparseable_judge_reply",
                    candidate_id=candidate_id,
                )
            continue
        items.append((candidate_id, min(1.0, max(0.0, float(match.group(0))))))
    return _make_report(
        MetricName.TOXICITY, items, runtime, coverage=len(items) / len(texts)
    )


def success(
    pairs: Sequence[tuple[str, str, str]],
    classifier: AgentProfile,
    target_label: str,
    runtime: ProviderRuntime | None = None,
    label_set: Sequence[str] = SENTIMENT_LABELS,
) -> MetricReport:
    """Fraction of rewrites classified as the target label.

    ``pairs`` holds (candidate_id, original, rewritten); only the rewritten
    text is classified. A failed classification counts 0 with a warning.
    """
    if not pairs:
        raise EmptyBatch("no pairs to classify")
    if target_label not in label_set:
        raise ValueError(f"target_label {target_label!r} not in label_set")
    runtime = runtime or ProviderRuntime()
    items: list[tuple[str, float]] = []
    for candidate_id, _original, rewritten in pairs:
        try:
            label, _ = runtime.classify(classifier, rewritten, label_set, stage="evaluation")
        except ProviderError:
            if runtime.ledger is not None:
                runtime.ledger.decision(
                    "evaluation",
                    warning="classification_error",
                    candidate_id=candidate_id,
                )
            items.append((candidate_id, 0.0))
            continue
        items.append((candidate_id, 1.0 if label == target_label else 0.0))
    return _make_report(MetricName.SUCCESS, items, runtime)


def perplexity(
    texts: Sequence[tuple[str, str]],
    scorer: AgentProfile,
    runtime: ProviderRuntime | None = None,
) -> MetricReport:
    """exp(-mean token log-probability) per text, mean-aggregated.

    Perplexity has a precise definition, so a backend that cannot return
    token log-probabilities is an error, not an approximation.
    """
    if not texts:
        raise EmptyBatch("no texts to score")
    runtime = runtime or ProviderRuntime()
    items: list[tuple[str, float]] = []
    for candidate_id, text in texts:
        logprobs = runtime.score(scorer, text, stage="evaluation")
        if logprobs is None:
            raise ScorerUnsupported(
                f"backend of {scorer.agent_id!r} returns no token_logprobs; "
                "configure a scoring-capable backend for perplexity"
            )
        if not logprobs:
            raise ValueError(f"no tokens scored for {candidate_id!r}")
        items.append((candidate_id, math.exp(-math.fsum(logprobs) / len(logprobs))))
    return _make_report(MetricName.PERPLEXITY, items, runtime)


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    norm_a = math.sqrt(math.fsum(x * x for x in a))
    norm_b = math.sqrt(math.fsum(x * x for x in b))
    if norm_a == 0 or norm_b == 0:
        raise DegenerateEmbedding("zero-norm embedding vector")
    dot = math.fsum(x * y for x, y in zip(a, b))
    return dot / (norm_a * norm_b)


def relevance(
    prompt_text: str,
    text: str,
    embedder: AgentProfile,
    runtime: ProviderRuntime | None = None,
) -> float:
    """Cosine similarity of the two embeddings, clamped to [0,1] for reporting."""
    if not prompt_text or not text:
        raise ValueError("relevance requires two non-empty texts")
    runtime = runtime or ProviderRuntime()
    vec_a = runtime.embed(embedder, prompt_text, stage="evaluation")
    vec_b = runtime.embed(embedder, text, stage="evaluation")
    return min(1.0, max(0.0, cosine(vec_a, vec_b)))


def relevance_report(
    pairs: Sequence[tuple[str, str, str]],
    embedder: AgentProfile,
    runtime: ProviderRuntime | None = None,
) -> MetricReport:
    """Batch relevance over (candidate_id, prompt, text) triples."""
    if not pairs:
        raise EmptyBatch("no pairs to embed")
    runtime = runtime or ProviderRuntime()
    items = [
        (candidate_id, relevance(prompt_text, text, embedder, runtime))
        for candidate_id, prompt_text, text in pairs
    ]
    return _make_report(MetricName.RELEVANCE, items, runtime)


class Verdict(str, Enum):
    ADOPTED = "adopted"
    PARTIALLY_ADOPTED = "partially_adopted"
    REJECTED = "rejected"


@dataclass(frozen=True)
class HRPERecord:
    candidate_id: str
    verdict: Verdict
    reviewer_id: str
    timestamp: datetime
    edited_text: str | None = None

    def __post_init__(self):
        if self.verdict == Verdict.PARTIALLY_ADOPTED and not self.edited_text:
            raise ValueError("partially_adopted requires a non-empty edited_text")
        if self.verdict != Verdict.PARTIALLY_ADOPTED and self.edited_text is not None:
            raise ValueError("edited_text only applies to partially_adopted")

    def to_dict(self) -> dict[str, Any]:
        return {
            "candidate_id": self.candidate_id,
            "verdict": self.verdict.value,
            "edited_text": self.edited_text,
            "reviewer_id": self.reviewer_id,
            "timestamp": self.timestamp.isoformat(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "HRPERecord":
        return cls(
            candidate_id=d["candidate_id"],
            verdict=Verdict(d["verdict"]),
            edited_text=d.get("edited_text"),
            reviewer_id=d["reviewer_id"],
            timestamp=datetime.fromisoformat(d["timestamp"]),
        )


@dataclass(frozen=True)
class HRPETally:
    adopted: int
    partial: int
    rejected: int
    rates: tuple[float, float, float]

    @property
    def total(self) -> int:
        return self.adopted + self.partial + self.rejected

    def to_dict(self) -> dict[str, Any]:
        return {
            "counts": {
                "adopted": self.adopted,
                "partial": self.partial,
                "rejected": self.rejected,
            },
            "rates": {
                "adopted": self.rates[0],
                "partial": self.rates[1],
                "rejected": self.rates[2],
            },
            "total": self.total,
        }


def hrpe_tally(records: Sequence[HRPERecord]) -> HRPETally:
    """Count verdicts and compute adoption rates in exact rational arithmetic."""
    if not records:
        raise EmptyBatch("no review records")
    seen: set[tuple[str, str]] = set()
    counts = {Verdict.ADOPTED: 0, Verdict.PARTIALLY_ADOPTED: 0, Verdict.REJECTED: 0}
    for record in records:
        key = (record.candidate_id, record.reviewer_id)
        if key in seen:
            raise DuplicateReview(record.candidate_id, record.reviewer_id)
        seen.add(key)
        counts[record.verdict] += 1
    total = len(records)
    rates = tuple(
        float(Fraction(counts[v], total))
        for v in (Verdict.ADOPTED, Verdict.PARTIALLY_ADOPTED, Verdict.REJECTED)
    )
    return HRPETally(
        adopted=counts[Verdict.ADOPTED],
        partial=counts[Verdict.PARTIALLY_ADOPTED],
        rejected=counts[Verdict.REJECTED],
        rates=rates,
    )
