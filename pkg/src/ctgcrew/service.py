"""HTTP service hosting run submission and the human review loop.

Runs execute on a background thread; reviewers pull a queue of unreviewed
candidates, submit adopt / partially-adopt / reject verdicts, and read the
live tally. Verdicts are persisted as review entries appended to the run's
own ledger, so the CLI tally and the service always agree.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .evaluation import HRPERecord, Verdict, hrpe_tally
from .ledger import Ledger, read_ledger
from .model import EventKind
from .pipelines import PipelineVariant, RunConfig, Variant, run_pipeline

_EMPTY_TALLY = {
    "counts": {"adopted": 0, "partial": 0, "rejected": 0},
    "rates": {"adopted": 0.0, "partial": 0.0, "rejected": 0.0},
    "total": 0,
}


@dataclass
class RunRecord:
    run_id: str
    status: str  # pending | running | completed | failed
    variant: str
    seed: int
    run_dir: Path
    candidates: list[dict[str, Any]] = field(default_factory=list)
    by_candidate: dict[str, dict[str, Any]] = field(default_factory=dict)
    reviews: dict[tuple[str, str], HRPERecord] = field(default_factory=dict)
    error: str | None = None


def _candidate_view(record: dict[str, Any]) -> dict[str, Any]:
    task = record["task"]
    candidate = record["candidate"]
    return {
        "candidate_id": candidate["candidate_id"],
        "item_id": record["item_id"],
        "original_input": task["original_input"],
        "candidate_text": candidate["text"],
        "persona_brief": task.get("persona_brief"),
        "round": candidate["round"],
    }


class RunStore:
    """In-memory registry over on-disk runs; reviews append to run ledgers."""

    def __init__(self, runs_root: str | Path, base_config: RunConfig | None = None):
        self.runs_root = Path(runs_root)
        self.base_config = base_config
        self._runs: dict[str, RunRecord] = {}
        self._candidate_index: dict[str, str] = {}
        self._lock = threading.Lock()
        self._load_existing()

    def _load_existing(self) -> None:
        if not self.runs_root.is_dir():
            return
        for run_dir in sorted(self.runs_root.iterdir()):
            if not (run_dir / "candidates.jsonl").is_file():
                continue
            record = RunRecord(
                run_id=run_dir.name,
                status="completed",
                variant="",
                seed=0,
                run_dir=run_dir,
            )
            self._attach_outputs(record)
            self._runs[run_dir.name] = record

    def _attach_outputs(self, record: RunRecord) -> None:
        import json

        candidates_path = record.run_dir / "candidates.jsonl"
        if candidates_path.is_file():
            with open(candidates_path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        item = json.loads(line)
                        view = _candidate_view(item)
                        record.candidates.append(view)
                        record.by_candidate[view["candidate_id"]] = view
                        self._candidate_index[view["candidate_id"]] = record.run_id
        ledger_path = record.run_dir / "ledger.jsonl"
        if ledger_path.is_file():
            for entry in read_ledger(ledger_path):
                if entry.event_kind == EventKind.REVIEW:
                    review = HRPERecord.from_dict(entry.payload["record"])
                    record.reviews[(review.candidate_id, review.reviewer_id)] = review

    def submit_run(self, overrides: dict[str, Any]) -> str:
        if self.base_config is None:
            raise ValueError("service started without a base run config")
        cfg = self.base_config
        variant = overrides.get("variant")
        if variant is not None:
            cfg = _replace(cfg, variant=PipelineVariant(
                name=Variant(variant),
                voting_stage=overrides.get("voting_stage", False),
            ))
        if overrides.get("seed") is not None:
            cfg = _replace(cfg, seed=overrides["seed"])
        if overrides.get("dataset_path"):
            cfg = _replace(cfg, dataset_path=overrides["dataset_path"])
        cfg = _replace(cfg, output_dir=str(self.runs_root))

        placeholder = f"pending-{len(self._runs)}-{id(cfg) & 0xFFFF}"
        record = RunRecord(
            run_id=placeholder,
            status="pending",
            variant=cfg.variant.name.value,
            seed=cfg.seed,
            run_dir=self.runs_root / placeholder,
        )
        with self._lock:
            self._runs[placeholder] = record

        def execute() -> None:
            record.status = "running"
            try:
                run_id = run_pipeline(cfg)
            except Exception as exc:
                record.status = "failed"
                record.error = str(exc)
                return
            with self._lock:
                # the placeholder stays addressable as an alias of the run
                record.run_id = run_id
                record.run_dir = self.runs_root / run_id
                self._attach_outputs(record)
                record.status = "completed"
                self._runs[run_id] = record

        threading.Thread(target=execute, daemon=True).start()
        return placeholder

    def get(self, run_id: str) -> RunRecord:
        with self._lock:
            record = self._runs.get(run_id)
        if record is None:
            raise KeyError(run_id)
        return record

    def queue(
        self, run_id: str, reviewer_id: str | None, cursor: int, limit: int
    ) -> dict[str, Any]:
        record = self.get(run_id)
        with self._lock:
            if reviewer_id is None:
                reviewed = {cid for cid, _ in record.reviews}
            else:
                reviewed = {
                    cid for cid, rid in record.reviews if rid == reviewer_id
                }
            pending = [
                view
                for view in record.candidates
                if view["candidate_id"] not in reviewed
            ]
        page = pending[cursor : cursor + limit]
        next_cursor = cursor + limit if cursor + limit < len(pending) else None
        return {
            "items": page,
            "cursor": str(next_cursor) if next_cursor is not None else None,
        }

    def submit_review(
        self,
        candidate_id: str,
        verdict: str,
        reviewer_id: str,
        edited_text: str | None,
    ) -> dict[str, Any]:
        with self._lock:
            run_id = self._candidate_index.get(candidate_id)
            if run_id is None:
                raise KeyError(candidate_id)
            record = self._runs[run_id]
            view = record.by_candidate[candidate_id]
            try:
                verdict_value = Verdict(verdict)
            except ValueError:
                raise ValueError(f"unknown verdict: {verdict!r}")
            if verdict_value == Verdict.PARTIALLY_ADOPTED:
                if not edited_text:
                    raise ValueError("partially_adopted requires edited_text")
                if edited_text == view["candidate_text"]:
                    raise ValueError(
                        "partially_adopted requires edited_text to differ from the candidate"
                    )
            elif edited_text is not None:
                raise ValueError("edited_text only applies to partially_adopted")
            key = (candidate_id, reviewer_id)
            if key in record.reviews:
                raise DuplicateReviewError(candidate_id, reviewer_id)
            review = HRPERecord(
                candidate_id=candidate_id,
                verdict=verdict_value,
                reviewer_id=reviewer_id,
                timestamp=datetime.now(timezone.utc),
                edited_text=edited_text,
            )
            record.reviews[key] = review
            ledger_path = record.run_dir / "ledger.jsonl"
            with Ledger(ledger_path) as ledger:
                ledger.append(
                    EventKind.REVIEW,
                    {"schema": "review", "stage": "review", "record": review.to_dict()},
                )
            return self._tally_locked(record)

    def tally(self, run_id: str) -> dict[str, Any]:
        record = self.get(run_id)
        with self._lock:
            return self._tally_locked(record)

    def _tally_locked(self, record: RunRecord) -> dict[str, Any]:
        if not record.reviews:
            return dict(_EMPTY_TALLY)
        return hrpe_tally(list(record.reviews.values())).to_dict()


class DuplicateReviewError(Exception):
    def __init__(self, candidate_id: str, reviewer_id: str):
        self.candidate_id = candidate_id
        self.reviewer_id = reviewer_id
        super().__init__(f"{candidate_id} already reviewed by {reviewer_id}")


class ReviewBody(BaseModel):
    verdict: str
    reviewer_id: str
    edited_text: str | None = None


class RunBody(BaseModel):
    variant: str | None = None
    voting_stage: bool = False
    seed: int | None = None
    dataset_path: str | None = None


def create_app(
    base_config: RunConfig | None = None, runs_root: str | Path = "runs"
) -> FastAPI:
    app = FastAPI(title="ctgcrew review service")
    # the console is served from a different origin than the service
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    store = RunStore(runs_root, base_config)
    app.state.store = store

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.post("/v1/runs", status_code=202)
    def post_run(body: RunBody):
        try:
            run_id = store.submit_run(body.model_dump())
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"run_id": run_id}

    @app.get("/v1/runs/{run_id}")
    def get_run(run_id: str):
        try:
            record = store.get(run_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown run: {run_id}")
        return {
            "run_id": record.run_id,
            "status": record.status,
            "variant": record.variant,
            "seed": record.seed,
            "candidate_count": len(record.candidates),
            "error": record.error,
        }

    @app.get("/v1/runs/{run_id}/candidates")
    def get_candidates(run_id: str):
        try:
            record = store.get(run_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown run: {run_id}")
        return {"items": record.candidates}

    @app.get("/v1/review/queue")
    def get_queue(
        run: str = Query(...),
        reviewer_id: str | None = Query(default=None),
        cursor: int = Query(default=0, ge=0),
        limit: int = Query(default=50, ge=1, le=500),
    ):
        try:
            return store.queue(run, reviewer_id, cursor, limit)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown run: {run}")

    @app.post("/v1/review/{candidate_id}")
    def post_review(candidate_id: str, body: ReviewBody):
        try:
            tally = store.submit_review(
                candidate_id, body.verdict, body.reviewer_id, body.edited_text
            )
        except KeyError:
            raise HTTPException(
                status_code=404, detail=f"unknown candidate: {candidate_id}"
            )
        except DuplicateReviewError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"status": "recorded", "tally": tally}

    @app.get("/v1/review/tally")
    def get_tally(run: str = Query(...)):
        try:
            return store.tally(run)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown run: {run}")

    return app


def _replace(cfg: RunConfig, **kw: Any) -> RunConfig:
    import dataclasses

    return dataclasses.replace(cfg, **kw)


def serve(
    base_config: RunConfig | None,
    port: int,
    runs_root: str | Path = "runs",
    host: str = "127.0.0.1",
) -> None:
    import uvicorn

    uvicorn.run(create_app(base_config, runs_root), host=host, port=port, log_level="warning")
