"""Wires the modules into named pipeline variants and executes runs.

A run loads a line-delimited JSON dataset, executes one variant's component
graph per item, and leaves behind a replayable ledger plus the final
candidates and metric reports under ``output_dir/<run_id>/``. With mock
backends and the default sequential worker, identical (config, seed)
produce byte-identical ledgers.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

from . import prompts
from .autoprompt import AutoPromptConfig, PersonaProfile, autoprompt
from .collaboration import GAConfig, collect_votes, ga_run, vote_select
from .inspection import WHOLE_TEXT
from .evaluation import (
    perplexity,
    relevance_report,
    success,
    toxicity,
)
from .ledger import Ledger
from .model import (
    Candidate,
    ControlCondition,
    Direction,
    EventKind,
    IdFactory,
    LogicalClock,
    TaskKind,
    TaskSpec,
    canonical_json,
    system_clock,
    validate_task,
)
from .providers import (
    AgentProfile,
    BackendKind,
    GenerationRequest,
    ProviderRuntime,
    Role,
)
from .reflection import ReflectionConfig, ReflectionTrace, reflect_generate


class Variant(str, Enum):
    CONTINUATION = "continuation"
    INJECTION = "injection"
    SINGLE_AGENT = "single_agent"
    V0 = "v0"
    V1 = "v1"
    V2 = "v2"
    V3 = "v3"
    FULL = "full"


@dataclass(frozen=True)
class PipelineVariant:
    name: Variant
    voting_stage: bool = False

    def __post_init__(self):
        if self.voting_stage and self.name != Variant.FULL:
            raise ValueError("voting_stage only applies to the full variant")

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name.value, "voting_stage": self.voting_stage}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PipelineVariant":
        return cls(name=Variant(d["name"]), voting_stage=d.get("voting_stage", False))


# Which ledger stages each variant is allowed (and required) to produce.
# "run" covers the run/item bookkeeping decisions present in every run.
VARIANT_STAGES: dict[Variant, frozenset[str]] = {
    Variant.CONTINUATION: frozenset({"run", "generation"}),
    Variant.INJECTION: frozenset({"run", "generation"}),
    Variant.SINGLE_AGENT: frozenset({"run", "generation", "inspection", "reflection"}),
    Variant.V0: frozenset({"run", "generation", "inspection", "reflection"}),
    Variant.V1: frozenset({"run", "generation", "inspection", "reflection"}),
    Variant.V2: frozenset({"run", "generation", "voting"}),
    Variant.V3: frozenset({"run", "generation", "ga"}),
    Variant.FULL: frozenset({"run", "autoprompt", "generation", "inspection", "reflection"}),
}


def variant_stage_contract(variant: PipelineVariant) -> frozenset[str]:
    stages = VARIANT_STAGES[variant.name]
    if variant.voting_stage:
        stages = stages | {"voting"}
    return stages


VARIANT_REQUIRED_ROLES: dict[Variant, frozenset[Role]] = {
    Variant.CONTINUATION: frozenset({Role.GENERATOR}),
    Variant.INJECTION: frozenset({Role.GENERATOR}),
    Variant.SINGLE_AGENT: frozenset({Role.GENERATOR}),
    Variant.V0: frozenset({Role.GENERATOR, Role.INSPECTOR}),
    Variant.V1: frozenset({Role.GENERATOR, Role.INSPECTOR}),
    Variant.V2: frozenset({Role.GENERATOR, Role.REVIEWER}),
    Variant.V3: frozenset({Role.GENERATOR, Role.REVIEWER}),
    Variant.FULL: frozenset(
        {
            Role.GENERATOR,
            Role.INSPECTOR,
            Role.PROMPT_ENGINEER,
            Role.PERSONA_ACTOR,
            Role.PERSONA_EVALUATOR,
        }
    ),
}


class DatasetError(Exception):
    pass


class DuplicateId(DatasetError):
    def __init__(self, item_id: str):
        self.item_id = item_id
        super().__init__(f"duplicate item_id: {item_id!r}")


@dataclass(frozen=True)
class DatasetItem:
    item_id: str
    prompt_or_input: str
    gold_label: str | None = None
    persona_brief: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "prompt_or_input": self.prompt_or_input,
            "gold_label": self.gold_label,
            "persona_brief": self.persona_brief,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DatasetItem":
        return cls(
            item_id=d["item_id"],
            prompt_or_input=d["prompt_or_input"],
            gold_label=d.get("gold_label"),
            persona_brief=d.get("persona_brief"),
        )


def load_dataset(path: str | Path) -> list[DatasetItem]:
    """Parse a line-delimited JSON dataset, rejecting duplicates eagerly."""
    items: list[DatasetItem] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                item = DatasetItem.from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(f"line {line_no}: {exc}") from exc
            if item.item_id in seen:
                raise DuplicateId(item.item_id)
            seen.add(item.item_id)
            items.append(item)
    return items


@dataclass(frozen=True)
class RunConfig:
    variant: PipelineVariant
    agents: tuple[AgentProfile, ...]
    dataset_path: str
    output_dir: str
    seed: int
    task_kind: TaskKind = TaskKind.CHARACTER_REWRITE
    control_conditions: tuple[ControlCondition, ...] = ()
    direction: Direction | None = None
    word_count_limit: int | None = None
    reflection: ReflectionConfig = ReflectionConfig()
    ga: GAConfig = GAConfig()
    autoprompt_cfg: AutoPromptConfig = AutoPromptConfig()
    metrics: tuple[str, ...] = ()
    max_parallel: int = 1

    def agents_with_role(self, role: Role) -> list[AgentProfile]:
        return [a for a in self.agents if a.role == role]

    def to_dict(self) -> dict[str, Any]:
        return {
            "variant": self.variant.to_dict(),
            "agents": [a.to_dict() for a in self.agents],
            "dataset_path": self.dataset_path,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "task_kind": self.task_kind.value,
            "control_conditions": [c.to_dict() for c in self.control_conditions],
            "direction": self.direction.value if self.direction else None,
            "word_count_limit": self.word_count_limit,
            "reflection": self.reflection.to_dict(),
            "ga": self.ga.to_dict(),
            "autoprompt": self.autoprompt_cfg.to_dict(),
            "metrics": list(self.metrics),
            "max_parallel": self.max_parallel,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        task = d.get("task", {})
        return cls(
            variant=PipelineVariant.from_dict(
                d["variant"]
                if isinstance(d.get("variant"), dict)
                else {"name": d.get("variant", "v1"), "voting_stage": d.get("voting_stage", False)}
            ),
            agents=tuple(AgentProfile.from_dict(a) for a in d["agents"]),
            dataset_path=d.get("dataset_path", ""),
            output_dir=d.get("output_dir", "runs"),
            seed=d["seed"],
            task_kind=TaskKind(task.get("kind", d.get("task_kind", "character_rewrite"))),
            control_conditions=tuple(
                ControlCondition.from_dict(c)
                for c in task.get("control_conditions", d.get("control_conditions", ()))
            ),
            direction=Direction(task["direction"])
            if task.get("direction")
            else (Direction(d["direction"]) if d.get("direction") else None),
            word_count_limit=task.get("word_count_limit", d.get("word_count_limit")),
            reflection=ReflectionConfig.from_dict(d.get("reflection", {})),
            ga=GAConfig.from_dict(d.get("ga", {})),
            autoprompt_cfg=AutoPromptConfig.from_dict(d.get("autoprompt", {})),
            metrics=tuple(d.get("metrics", ())),
            max_parallel=d.get("max_parallel", 1),
        )

    @classmethod
    def from_file(cls, path: str | Path, **overrides: Any) -> "RunConfig":
        """Load a config file; relative dataset/rules paths resolve against it."""
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        data.update({k: v for k, v in overrides.items() if v is not None})
        base = path.parent

        def resolve(p: str | None) -> str | None:
            if p and not Path(p).is_absolute():
                return str(base / p)
            return p

        if "dataset_path" in data:
            data["dataset_path"] = resolve(data["dataset_path"])
        for agent in data.get("agents", ()):
            backend = agent.get("backend", {})
            if backend.get("rules_path"):
                backend["rules_path"] = resolve(backend["rules_path"])
        return cls.from_dict(data)


def validate_run_config(cfg: RunConfig) -> list[str]:
    violations: list[str] = []
    present = {a.role for a in cfg.agents}
    required = set(VARIANT_REQUIRED_ROLES[cfg.variant.name])
    if cfg.variant.voting_stage:
        required.add(Role.REVIEWER)
    missing = required - present
    if missing:
        violations.append(
            "missing agent roles for variant "
            f"{cfg.variant.name.value}: {sorted(r.value for r in missing)}"
        )
    if not cfg.control_conditions:
        violations.append("control_conditions must be non-empty")
    seen_ids: set[str] = set()
    for agent in cfg.agents:
        if agent.agent_id in seen_ids:
            violations.append(f"duplicate agent_id: {agent.agent_id!r}")
        seen_ids.add(agent.agent_id)
    if cfg.metrics and not cfg.agents_with_role(Role.JUDGE):
        violations.append("metrics require a judge agent")
    return violations


def build_task(cfg: RunConfig, item: DatasetItem, ids: IdFactory) -> TaskSpec:
    conditions = list(cfg.control_conditions)
    if cfg.word_count_limit is not None and not any(
        c.dimension_id == "word_count" for c in conditions
    ):
        conditions.append(
            ControlCondition(
                dimension_id="word_count",
                description=f"at most {cfg.word_count_limit} words",
                severity_weight=1.0,
            )
        )
    return TaskSpec(
        task_id=ids.next("task"),
        kind=cfg.task_kind,
        original_input=item.prompt_or_input,
        control_conditions=tuple(conditions),
        direction=cfg.direction if cfg.task_kind == TaskKind.SENTIMENT_TRANSFORM else None,
        persona_brief=item.persona_brief
        if cfg.task_kind == TaskKind.CHARACTER_REWRITE
        else None,
        word_count_limit=cfg.word_count_limit,
    )


def _single_shot(
    task: TaskSpec,
    generator: AgentProfile,
    prompt: str,
    runtime: ProviderRuntime,
    ids: IdFactory,
    seed: int | None = None,
) -> Candidate:
    request = GenerationRequest(messages=(("user", prompt),), seed=seed)
    reply = runtime.generate(generator, request, stage="generation")
    return Candidate(
        candidate_id=ids.next("cand"),
        text=reply.text,
        round=1,
        generator_agent_id=generator.agent_id,
    )


def _as_inspector(agent: AgentProfile) -> AgentProfile:
    """Same agent, inspector hat: used by the self-reflection variant."""
    return AgentProfile(
        agent_id=agent.agent_id,
        role=Role.INSPECTOR,
        backend=agent.backend,
        system_prompt=agent.system_prompt,
        temperature=agent.temperature,
        seed=agent.seed,
    )


def run_item(
    cfg: RunConfig,
    item: DatasetItem,
    runtime: ProviderRuntime,
    ids: IdFactory,
) -> dict[str, Any]:
    """Execute the configured variant's component graph for one item."""
    task = build_task(cfg, item, ids)
    violations = validate_task(task)
    if violations:
        raise ValueError(f"item {item.item_id!r}: {violations}")

    generators = cfg.agents_with_role(Role.GENERATOR)
    inspectors = cfg.agents_with_role(Role.INSPECTOR)
    reviewers = cfg.agents_with_role(Role.REVIEWER)
    generator = generators[0]
    name = cfg.variant.name
    trace: ReflectionTrace | None = None
    extra: dict[str, Any] = {}

    if name == Variant.CONTINUATION:
        final = _single_shot(task, generator, prompts.continuation_prompt(task), runtime, ids)
    elif name == Variant.INJECTION:
        final = _single_shot(task, generator, prompts.injection_prompt(task), runtime, ids)
    elif name == Variant.SINGLE_AGENT:
        self_cfg = dataclasses.replace(cfg.reflection, inspection_topology=WHOLE_TEXT)
        final, trace = reflect_generate(
            task, generator, [_as_inspector(generator)], self_cfg, runtime, ids
        )
    elif name == Variant.V0:
        v0_cfg = dataclasses.replace(cfg.reflection, inspection_topology=WHOLE_TEXT)
        final, trace = reflect_generate(
            task, generator, inspectors[:1], v0_cfg, runtime, ids
        )
    elif name == Variant.V1:
        final, trace = reflect_generate(
            task, generator, inspectors, cfg.reflection, runtime, ids
        )
    elif name == Variant.V2:
        candidates = [
            _single_shot(
                task,
                profile,
                prompts.injection_prompt(task),
                runtime,
                ids,
                seed=(profile.seed or 0) * 1009 + slot,
            )
            for slot, profile in enumerate(generators)
        ]
        matrix = collect_votes(candidates, reviewers, task, runtime)
        winner_id = vote_select(matrix)
        final = next(c for c in candidates if c.candidate_id == winner_id)
        if runtime.ledger is not None:
            runtime.ledger.decision(
                "voting", selected=winner_id, matrix=matrix.to_dict()
            )
        extra["vote_matrix"] = matrix.to_dict()
    elif name == Variant.V3:
        final, history = ga_run(task, generators, reviewers[0], cfg.ga, runtime, ids)
        extra["ga_history"] = [g.to_dict() for g in history]
    elif name == Variant.FULL:
        active_generator = generator
        if task.persona_brief:
            persona = autoprompt(
                PersonaProfile(brief=task.persona_brief),
                cfg.autoprompt_cfg,
                cfg.agents_with_role(Role.PROMPT_ENGINEER)[0],
                cfg.agents_with_role(Role.PERSONA_ACTOR)[0],
                cfg.agents_with_role(Role.PERSONA_EVALUATOR)[0],
                runtime,
            )
            extra["persona"] = persona.to_dict()
            active_generator = dataclasses.replace(
                generator,
                system_prompt=(generator.system_prompt + "\n" + (persona.enriched or "")).strip(),
            )
        final, trace = reflect_generate(
            task, active_generator, inspectors, cfg.reflection, runtime, ids
        )
        if cfg.variant.voting_stage and trace is not None:
            candidates = [step.candidate for step in trace.iterations]
            matrix = collect_votes(candidates, reviewers, task, runtime)
            winner_id = vote_select(matrix)
            final = next(c for c in candidates if c.candidate_id == winner_id)
            if runtime.ledger is not None:
                runtime.ledger.decision(
                    "voting", selected=winner_id, matrix=matrix.to_dict()
                )
            extra["vote_matrix"] = matrix.to_dict()
    else:  # pragma: no cover
        raise ValueError(f"unknown variant: {name}")

    record: dict[str, Any] = {
        "item_id": item.item_id,
        "task": task.to_dict(),
        "candidate": final.to_dict(),
    }
    if trace is not None:
        record["trace"] = trace.to_dict()
    record.update(extra)
    return record


def _derive_run_id(cfg: RunConfig) -> str:
    digest = hashlib.sha256(canonical_json(cfg.to_dict()).encode()).hexdigest()
    return f"run-{cfg.seed}-{digest[:10]}"


def _all_mock(cfg: RunConfig) -> bool:
    return all(a.backend.kind == BackendKind.MOCK for a in cfg.agents)


def _run_metrics(
    cfg: RunConfig,
    records: list[dict[str, Any]],
    runtime: ProviderRuntime,
    run_dir: Path,
) -> None:
    judge = cfg.agents_with_role(Role.JUDGE)[0]
    finals = [
        (r["candidate"]["candidate_id"], r["candidate"]["text"]) for r in records
    ]
    pairs = [
        (
            r["candidate"]["candidate_id"],
            r["task"]["original_input"],
            r["candidate"]["text"],
        )
        for r in records
    ]
    reports = {}
    for metric in cfg.metrics:
        if metric == "toxicity":
            reports[metric] = toxicity(finals, judge, runtime)
        elif metric == "perplexity":
            reports[metric] = perplexity(finals, judge, runtime)
        elif metric == "relevance":
            reports[metric] = relevance_report(pairs, judge, runtime)
        elif metric == "success":
            target = (
                "positive"
                if cfg.direction == Direction.NEG2POS
                else "negative"
                if cfg.direction == Direction.POS2NEG
                else "positive"
            )
            reports[metric] = success(pairs, judge, target, runtime)
        else:
            raise ValueError(f"unknown metric: {metric!r}")
    reports_dir = run_dir / "reports"
    reports_dir.mkdir(exist_ok=True)
    for metric, report in reports.items():
        (reports_dir / f"{metric}.json").write_text(
            canonical_json(report.to_dict()) + "\n", encoding="utf-8"
        )


def run_pipeline(cfg: RunConfig) -> str:
    """Execute a full run; returns the run id.

    Per-item failures are recorded in the ledger and the run continues; the
    run itself fails only on configuration or dataset errors.
    """
    violations = validate_run_config(cfg)
    if violations:
        raise ValueError(f"invalid run config: {violations}")
    items = load_dataset(cfg.dataset_path)

    run_id = _derive_run_id(cfg)
    out_root = Path(cfg.output_dir)
    run_dir = out_root / run_id
    bump = 1
    while run_dir.exists():
        bump += 1
        run_dir = out_root / f"{run_id}-{bump}"
    run_id = run_dir.name
    run_dir.mkdir(parents=True)

    clock = LogicalClock() if _all_mock(cfg) else system_clock
    records: list[dict[str, Any]] = []
    with Ledger(run_dir / "ledger.jsonl", clock) as ledger:
        runtime = ProviderRuntime(ledger, max_parallel=cfg.max_parallel)
        ids = IdFactory(cfg.seed)
        ledger.decision(
            "run",
            event="run_started",
            variant=cfg.variant.name.value,
            voting_stage=cfg.variant.voting_stage,
            seed=cfg.seed,
            item_count=len(items),
        )
        (run_dir / "config.json").write_text(
            canonical_json(cfg.to_dict()) + "\n", encoding="utf-8"
        )
        candidates_path = run_dir / "candidates.jsonl"
        with open(candidates_path, "a", encoding="utf-8") as out:
            for item in items:
                try:
                    record = run_item(cfg, item, runtime, ids)
                except Exception as exc:
                    ledger.decision(
                        "run", event="item_failed", item_id=item.item_id, error=str(exc)
                    )
                    continue
                records.append(record)
                out.write(canonical_json(record) + "\n")
                ledger.decision(
                    "run",
                    event="item_completed",
                    item_id=item.item_id,
                    candidate_id=record["candidate"]["candidate_id"],
                )
        if cfg.metrics and records:
            _run_metrics(cfg, records, runtime, run_dir)
        prompt_tokens = completion_tokens = 0
        for entry in ledger.of_kind(EventKind.AGENT_REPLY):
            usage = entry.payload.get("reply", {}).get("usage", {})
            prompt_tokens += usage.get("prompt_tokens", 0)
            completion_tokens += usage.get("completion_tokens", 0)
        ledger.decision(
            "run",
            event="run_completed",
            items_completed=len(records),
            items_failed=len(items) - len(records),
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
        )
    return run_id
