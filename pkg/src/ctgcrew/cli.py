"""Command-line entry points: run, autoprompt, tally, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .autoprompt import AutoPromptConfig, PersonaProfile, autoprompt
from .evaluation import HRPERecord, hrpe_tally
from .ledger import read_ledger
from .model import EventKind, canonical_json
from .pipelines import RunConfig, run_pipeline
from .providers import ProviderRuntime, Role
from .service import serve


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctgcrew")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a pipeline run over a dataset")
    run_p.add_argument("--config", required=True, help="run config JSON file")
    run_p.add_argument("--dataset", help="dataset path override (JSONL)")
    run_p.add_argument("--variant", help="pipeline variant name override")
    run_p.add_argument("--seed", type=int, help="run seed override")
    run_p.add_argument("--out", help="output directory override")
    run_p.add_argument(
        "--voting-stage", action="store_true", help="enable the voting stage (full variant)"
    )

    ap_p = sub.add_parser("autoprompt", help="enrich a persona brief")
    ap_p.add_argument("--brief", required=True, help="persona brief JSON file")
    ap_p.add_argument("--out", required=True, help="output file for the enriched profile")
    ap_p.add_argument("--config", required=True, help="run config JSON file (for agents)")

    tally_p = sub.add_parser("tally", help="print the review tally of a run")
    tally_p.add_argument("--run", required=True, help="run id")
    tally_p.add_argument("--out", default="runs", help="runs root directory")

    serve_p = sub.add_parser("serve", help="start the review service")
    serve_p.add_argument("--port", type=int, required=True)
    serve_p.add_argument("--config", help="run config JSON file")
    serve_p.add_argument("--runs", default="runs", help="runs root directory")
    serve_p.add_argument("--host", default="127.0.0.1")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    overrides: dict = {}
    if args.dataset:
        overrides["dataset_path"] = args.dataset
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out:
        overrides["output_dir"] = args.out
    if args.variant:
        overrides["variant"] = {"name": args.variant, "voting_stage": args.voting_stage}
    cfg = RunConfig.from_file(args.config, **overrides)
    run_id = run_pipeline(cfg)
    print(run_id)
    print(f"outputs: {Path(cfg.output_dir) / run_id}", file=sys.stderr)
    return 0


def _cmd_autoprompt(args: argparse.Namespace) -> int:
    cfg = RunConfig.from_file(args.config)
    with open(args.brief, encoding="utf-8") as fh:
        brief_data = json.load(fh)
    profile = PersonaProfile(
        brief=brief_data["brief"],
        sample_utterances=tuple(brief_data.get("sample_utterances", ())),
    )
    runtime = ProviderRuntime()
    result = autoprompt(
        profile,
        cfg.autoprompt_cfg or AutoPromptConfig(),
        cfg.agents_with_role(Role.PROMPT_ENGINEER)[0],
        cfg.agents_with_role(Role.PERSONA_ACTOR)[0],
        cfg.agents_with_role(Role.PERSONA_EVALUATOR)[0],
        runtime,
    )
    Path(args.out).write_text(canonical_json(result.to_dict()) + "\n", encoding="utf-8")
    print(f"consistency_rate={result.consistency_rate} attempts={result.attempts}")
    return 0


def _cmd_tally(args: argparse.Namespace) -> int:
    ledger_path = Path(args.out) / args.run / "ledger.jsonl"
    if not ledger_path.is_file():
        print(f"no ledger for run {args.run!r} under {args.out!r}", file=sys.stderr)
        return 1
    records = [
        HRPERecord.from_dict(e.payload["record"])
        for e in read_ledger(ledger_path)
        if e.event_kind == EventKind.REVIEW
    ]
    if not records:
        print(canonical_json({"counts": {"adopted": 0, "partial": 0, "rejected": 0}, "total": 0}))
        return 0
    print(canonical_json(hrpe_tally(records).to_dict()))
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    cfg = RunConfig.from_file(args.config) if args.config else None
    serve(cfg, args.port, runs_root=args.runs, host=args.host)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "autoprompt": _cmd_autoprompt,
        "tally": _cmd_tally,
        "serve": _cmd_serve,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
