"""Candidate selection by reviewer voting and by genetic evolution.

Voting: every reviewer scores every candidate; the candidate with the
highest score sum wins, with ties broken by column order so reruns pick the
same winner.

Genetic evolution: the top half of each generation survives, survivor pairs
are recombined, children are randomly mutated, and everything is re-scored,
for a fixed number of generations or until a quality threshold is reached.
Crossover and mutation fall back to deterministic text operators whenever
no agent is available or a provider call fails, so a run always completes.
"""

from __future__ import annotations

import dataclasses
import math
import random
import re
from dataclasses import dataclass
from typing import Any, Callable, Sequence

from . import prompts
from .model import Candidate, IdFactory, TaskSpec
from .providers import AgentProfile, BackendKind, GenerationRequest, ProviderError, ProviderRuntime, Role

_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")


@dataclass(frozen=True)
class VoteMatrix:
    """Reviewer-by-candidate score grid; rows are reviewers, columns candidates."""

    candidates: tuple[str, ...]
    reviewers: tuple[str, ...]
    scores: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if len(self.scores) != len(self.reviewers):
            raise ValueError("one score row per reviewer required")
        for row in self.scores:
            if len(row) != len(self.candidates):
                raise ValueError("one score per candidate required in each row")
            for value in row:
                if not 0 <= value <= 1:
                    raise ValueError("scores must lie in [0,1]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "candidates": list(self.candidates),
            "reviewers": list(self.reviewers),
            "scores": [list(row) for row in self.scores],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "VoteMatrix":
        return cls(
            candidates=tuple(d["candidates"]),
            reviewers=tuple(d["reviewers"]),
            scores=tuple(tuple(row) for row in d["scores"]),
        )


@dataclass(frozen=True)
class GAConfig:
    population_size: int = 4
    generations: int = 3
    mutation_probability: float = 0.3
    elitism: bool = True
    quality_threshold: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.population_size < 2 or self.population_size % 2:
            raise ValueError("population_size must be even and >= 2")
        if self.generations < 1:
            raise ValueError("generations must be positive")
        if not 0 <= self.mutation_probability <= 1:
            raise ValueError("mutation_probability must be in [0,1]")
        if not 0 < self.quality_threshold <= 1:
            raise ValueError("quality_threshold must be in (0,1]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "population_size": self.population_size,
            "generations": self.generations,
            "mutation_probability": self.mutation_probability,
            "elitism": self.elitism,
            "quality_threshold": self.quality_threshold,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GAConfig":
        return cls(
            population_size=d.get("population_size", 4),
            generations=d.get("generations", 3),
            mutation_probability=d.get("mutation_probability", 0.3),
            elitism=d.get("elitism", True),
            quality_threshold=d.get("quality_threshold", 1.0),
            rng_seed=d.get("rng_seed", 0),
        )


def parse_score(reply_text: str) -> float | None:
    """First number in the reply, clamped to [0,1]; None when absent."""
    match = _NUMBER_RE.search(reply_text)
    if match is None:
        return None
    return min(1.0, max(0.0, float(match.group(0))))


def collect_votes(
    candidates: Sequence[Candidate],
    reviewers: Sequence[AgentProfile],
    spec: TaskSpec,
    runtime: ProviderRuntime | None = None,
) -> VoteMatrix:
    """Have every reviewer score every candidate against the task rubric.

    The matrix always completes: an unparseable reply or a provider failure
    scores the cell 0.0 and leaves a warning in the ledger.
    """
    if not candidates or not reviewers:
        raise ValueError("need at least one candidate and one reviewer")
    for reviewer in reviewers:
        if reviewer.role != Role.REVIEWER:
            raise ValueError(f"agent {reviewer.agent_id!r} is not a reviewer")
    runtime = runtime or ProviderRuntime()
    rows: list[tuple[float, ...]] = []
    for reviewer in reviewers:
        row: list[float] = []
        for candidate in candidates:
            request = GenerationRequest(
                messages=(("user", prompts.reviewer_prompt(candidate.text, spec)),),
                temperature=0.0,
            )
            try:
                reply = runtime.generate(reviewer, request, stage="voting")
            except ProviderError:
                row.append(0.0)
                if runtime.ledger is not None:
                    runtime.ledger.decision(
                        "voting",
                        warning="vote_cell_error",
                        reviewer_id=reviewer.agent_id,
                        candidate_id=candidate.candidate_id,
                    )
                continue
            score = parse_score(reply.text)
            if score is None:
                score = 0.0
                if runtime.ledger is not None:
                    runtime.ledger.decision(
                        "voting",
                        warning="unparseable_vote",
                        reviewer_id=reviewer.agent_id,
                        candidate_id=candidate.candidate_id,
                        reply=reply.text[:120],
                    )
            row.append(score)
        rows.append(tuple(row))
    return VoteMatrix(
        candidates=tuple(c.candidate_id for c in candidates),
        reviewers=tuple(r.agent_id for r in reviewers),
        scores=tuple(rows),
    )


def vote_select(matrix: VoteMatrix) -> str:
    """Candidate id with the maximal score sum; ties go to the lowest column."""
    if not matrix.candidates:
        raise ValueError("empty vote matrix")
    best_idx = 0
    best_sum = -math.inf
    for col in range(len(matrix.candidates)):
        total = sum(row[col] for row in matrix.scores)
        if total > best_sum:
            best_sum = total
            best_idx = col
    return matrix.candidates[best_idx]


def ga_select(population: Sequence[tuple[Candidate, float]]) -> list[Candidate]:
    """Keep the top half (rounded up) by fitness; ties break by candidate id."""
    if any(f is None for _, f in population):
        raise ValueError("every member needs a fitness before selection")
    keep = math.ceil(len(population) / 2)
    ranked = sorted(population, key=lambda pair: (-pair[1], pair[0].candidate_id))
    return [c for c, _ in ranked[:keep]]


_SENTENCE_RE = re.compile(r"[^.!?]+[.!?]?")


def split_sentences(text: str) -> list[str]:
    return [seg.strip() for seg in _SENTENCE_RE.findall(text) if seg.strip()]


def interleave_texts(a: str, b: str, start_with_a: bool) -> str:
    """Deterministic crossover operator: alternate sentences of both parents.

    Segment i comes from the first parent on even i (when starting with a),
    from the second on odd i; a parent that ran out of sentences yields its
    slot to the other.
    """
    a_segs, b_segs = split_sentences(a), split_sentences(b)
    out: list[str] = []
    for i in range(max(len(a_segs), len(b_segs))):
        pick_a = (i % 2 == 0) == start_with_a
        if pick_a:
            seg = a_segs[i] if i < len(a_segs) else b_segs[i]
        else:
            seg = b_segs[i] if i < len(b_segs) else a_segs[i]
        out.append(seg)
    return " ".join(out)


def _is_mock(agent: AgentProfile | None) -> bool:
    return agent is None or agent.backend.kind == BackendKind.MOCK


def ga_crossover(
    a: Candidate,
    b: Candidate,
    crossover_agent: AgentProfile | None,
    rng: random.Random,
    ids: IdFactory,
    runtime: ProviderRuntime | None = None,
    spec: TaskSpec | None = None,
) -> Candidate:
    """Recombine two parents into one child.

    An agent merges the parents' strengths when a non-mock agent is
    available; otherwise (mock backend or provider failure) the
    deterministic sentence interleaver runs, so a crossover step never
    aborts a generation.
    """
    if a.candidate_id == b.candidate_id:
        raise ValueError("crossover requires distinct parents")
    start_with_a = rng.random() < 0.5
    text: str | None = None
    agent_id = crossover_agent.agent_id if crossover_agent else "crossover:interleave"
    if not _is_mock(crossover_agent) and runtime is not None:
        conditions = prompts.conditions_block(spec.control_conditions) if spec else "(none)"
        prompt = (
            "Merge the strengths of the two drafts below into one text that "
            f"satisfies these conditions:\n{conditions}\n"
            f"Draft A:\n{a.text}\nDraft B:\n{b.text}\n"
            "Reply with the merged text only."
        )
        try:
            text = runtime.generate(
                crossover_agent,
                GenerationRequest(messages=(("user", prompt),)),
                stage="ga",
            ).text
        except ProviderError:
            text = None
    if text is None:
        text = interleave_texts(a.text, b.text, start_with_a)
    return Candidate(
        candidate_id=ids.next("cand"),
        text=text,
        round=max(a.round, b.round) + 1,
        generator_agent_id=agent_id,
        parent_ids=(a.candidate_id, b.candidate_id),
    )


def shuffle_words(text: str, rng: random.Random) -> str:
    words = text.split()
    rng.shuffle(words)
    return " ".join(words)


def ga_mutate(
    c: Candidate,
    mutation_agent: AgentProfile | None,
    p: float,
    rng: random.Random,
    ids: IdFactory,
    runtime: ProviderRuntime | None = None,
    spec: TaskSpec | None = None,
) -> Candidate:
    """With probability ``p`` rewrite the candidate, else return it unchanged.

    The rewrite comes from the mutation agent when one is available, and
    from the seeded word-shuffle operator under mock backends or provider
    failure. A mutated child records its source as its single parent.
    """
    if not 0 <= p <= 1:
        raise ValueError("mutation probability must be in [0,1]")
    if rng.random() >= p:
        return c
    text: str | None = None
    agent_id = mutation_agent.agent_id if mutation_agent else "mutation:shuffle"
    if not _is_mock(mutation_agent) and runtime is not None:
        conditions = prompts.conditions_block(spec.control_conditions) if spec else "(none)"
        prompt = (
            "Rewrite the text with different wording or sentence structure "
            f"while preserving these conditions:\n{conditions}\n"
            f"Text:\n{c.text}\nReply with the rewritten text only."
        )
        try:
            text = runtime.generate(
                mutation_agent,
                GenerationRequest(messages=(("user", prompt),)),
                stage="ga",
            ).text
        except ProviderError:
            text = None
    if text is None:
        text = shuffle_words(c.text, rng)
    return Candidate(
        candidate_id=ids.next("cand"),
        text=text,
        round=c.round + 1,
        generator_agent_id=agent_id,
        parent_ids=(c.candidate_id,),
    )


@dataclass(frozen=True)
class GAGeneration:
    generation: int
    candidate_ids: tuple[str, ...]
    fitness_values: tuple[float, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "generation": self.generation,
            "candidate_ids": list(self.candidate_ids),
            "fitness_values": list(self.fitness_values),
        }


Evaluator = Callable[[Candidate], float]


def _agent_evaluator(
    agent: AgentProfile, spec: TaskSpec, runtime: ProviderRuntime
) -> Evaluator:
    def evaluate(candidate: Candidate) -> float:
        request = GenerationRequest(
            messages=(("user", prompts.reviewer_prompt(candidate.text, spec)),),
            temperature=0.0,
        )
        try:
            reply = runtime.generate(agent, request, stage="ga")
        except ProviderError:
            if runtime.ledger is not None:
                runtime.ledger.decision(
                    "ga", warning="fitness_error", candidate_id=candidate.candidate_id
                )
            return 0.0
        return parse_score(reply.text) or 0.0

    return evaluate


def ga_run(
    spec: TaskSpec,
    generators: Sequence[AgentProfile],
    evaluator: AgentProfile | Evaluator,
    config: GAConfig,
    runtime: ProviderRuntime | None = None,
    ids: IdFactory | None = None,
) -> tuple[Candidate, list[GAGeneration]]:
    """Evolve a candidate population and return (best candidate, history).

    Each generation: score everything, keep the top half, pair survivors by
    a seeded shuffle, recombine to refill the population, mutate the new
    children, and re-score. With elitism the best-so-far is re-injected
    unmutated whenever a generation lost it. Stops early once the best
    fitness reaches the quality threshold.
    """
    if not generators:
        raise ValueError("need at least one generator")
    runtime = runtime or ProviderRuntime()
    ids = ids or IdFactory(config.rng_seed)
    rng = random.Random(config.rng_seed)
    evaluate = (
        _agent_evaluator(evaluator, spec, runtime)
        if isinstance(evaluator, AgentProfile)
        else evaluator
    )

    population: list[Candidate] = []
    for slot in range(config.population_size):
        profile = generators[slot % len(generators)]
        request = GenerationRequest(
            messages=(("user", prompts.injection_prompt(spec)),),
            seed=(profile.seed or 0) * 1009 + slot,
        )
        try:
            text = runtime.generate(profile, request, stage="generation").text
        except ProviderError:
            text = spec.original_input  # degrade: seed population with the input
        population.append(
            Candidate(
                candidate_id=ids.next("cand"),
                text=text,
                round=0,
                generator_agent_id=profile.agent_id,
            )
        )

    def scored(members: list[Candidate]) -> list[Candidate]:
        return [
            m if m.fitness is not None else dataclasses.replace(m, fitness=evaluate(m))
            for m in members
        ]

    history: list[GAGeneration] = []
    best: Candidate | None = None

    def record(generation: int, members: list[Candidate]) -> None:
        assert len(members) == config.population_size
        history.append(
            GAGeneration(
                generation=generation,
                candidate_ids=tuple(m.candidate_id for m in members),
                fitness_values=tuple(m.fitness for m in members),
            )
        )
        if runtime.ledger is not None:
            runtime.ledger.decision(
                "ga",
                generation=generation,
                fitness=[m.fitness for m in members],
            )

    population = scored(population)
    best = max(population, key=lambda m: (m.fitness, m.candidate_id))
    record(1, population)

    for generation in range(2, config.generations + 1):
        if best.fitness >= config.quality_threshold:
            break
        survivors = ga_select([(m, m.fitness) for m in population])
        pairing_pool = survivors
        if len(pairing_pool) < 2:
            ranked = sorted(population, key=lambda m: (-m.fitness, m.candidate_id))
            pairing_pool = ranked[:2]
        order = list(pairing_pool)
        rng.shuffle(order)
        pairs = [
            (order[i % len(order)], order[(i + 1) % len(order)])
            for i in range(0, max(len(order), 2), 2)
        ]
        children: list[Candidate] = []
        pair_idx = 0
        while len(survivors) + len(children) < config.population_size:
            parent_a, parent_b = pairs[pair_idx % len(pairs)]
            pair_idx += 1
            child = ga_crossover(
                parent_a,
                parent_b,
                _profile_of(parent_a, generators),
                rng,
                ids,
                runtime=runtime,
                spec=spec,
            )
            child = ga_mutate(
                child,
                _profile_of(child, generators),
                config.mutation_probability,
                rng,
                ids,
                runtime=runtime,
                spec=spec,
            )
            children.append(child)
        population = scored(survivors + children)
        gen_best = max(population, key=lambda m: (m.fitness, m.candidate_id))
        if gen_best.fitness > best.fitness:
            best = gen_best
        elif config.elitism and best.candidate_id not in {
            m.candidate_id for m in population
        }:
            worst = min(range(len(population)), key=lambda i: (population[i].fitness, i))
            population[worst] = best
            if runtime.ledger is not None:
                runtime.ledger.decision(
                    "ga", event="elitism_injection", candidate_id=best.candidate_id
                )
        record(generation, population)
        if best.fitness >= config.quality_threshold:
            break

    return best, history


def _profile_of(
    candidate: Candidate, generators: Sequence[AgentProfile]
) -> AgentProfile | None:
    for profile in generators:
        if profile.agent_id == candidate.generator_agent_id:
            return profile
    return generators[0] if generators else None
