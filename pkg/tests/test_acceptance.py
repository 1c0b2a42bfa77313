"""Acceptance suite: one test per release criterion, each printing PASS/FAIL.

Run with ``pytest tests/test_acceptance.py -v``; the per-criterion lines are
written straight to the terminal even under output capture.
"""

from __future__ import annotations

import math
import random
import re
import subprocess
import sys
import time
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

from ctgcrew.collaboration import GAConfig, VoteMatrix, ga_mutate, ga_run, vote_select
from ctgcrew.evaluation import (
    HRPERecord,
    Verdict,
    hrpe_tally,
    perplexity,
    relevance,
)
from ctgcrew.inspection import CENTRALIZED_CHAIN, inspect_all
from ctgcrew.ledger import file_digest, read_ledger
from ctgcrew.model import Candidate, IdFactory
from ctgcrew.pipelines import (
    RunConfig,
    Variant,
    run_pipeline,
    variant_stage_contract,
)
from ctgcrew.providers import ProviderRuntime, Role, ScriptedBackend
from ctgcrew.reflection import ReflectionConfig, StopReason, reflect_generate

from conftest import make_conditions, make_profile, make_task
from test_collaboration import brute_force_select
from test_reflection import feedback_obeying_generator, marker_inspector_fn

REPO = Path(__file__).resolve().parent.parent
FIXTURES = REPO / "fixtures"


RESULTS: list[str] = []


def report(name: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}"
    if detail:
        line += f" :: {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    assert ok, line


def test_reflection_loss_convergence():
    """Feedback-obeying generator, 3 equal-weight dims: losses 2/3, 1/3, 0."""
    started = time.perf_counter()
    task = make_task(conditions=make_conditions("d1", "d2", "d3"))
    runtime = ProviderRuntime()
    runtime.register_backend(
        "gen", ScriptedBackend(generate_fn=feedback_obeying_generator(["d1"]))
    )
    runtime.register_backend("insp", ScriptedBackend(generate_fn=marker_inspector_fn))
    best, trace = reflect_generate(
        task,
        make_profile("gen", Role.GENERATOR, seed=5),
        [make_profile("insp", Role.INSPECTOR)],
        ReflectionConfig(),
        runtime,
    )
    elapsed = time.perf_counter() - started
    losses = [step.loss for step in trace.iterations]
    expected = [float(Fraction(2, 3)), float(Fraction(1, 3)), 0.0]
    ok = (
        len(trace.iterations) == 3
        and trace.stop_reason == StopReason.CONVERGED
        and all(abs(a - b) <= 1e-12 for a, b in zip(losses, expected))
        and elapsed < 1.0
    )
    report(
        "Reflection loss convergence",
        ok,
        f"losses={losses}, rounds={len(trace.iterations)}, {elapsed:.3f}s",
    )


def test_lossless_feedback_pooling():
    """500 random fixtures lose nothing decentralized; lossy chain drops findings."""
    started = time.perf_counter()
    rng = random.Random(2024)
    lossless = 0
    trials = 500
    for _ in range(trials):
        dims = [f"d{i}" for i in range(rng.randint(1, 5))]
        inspectors = [f"i{j}" for j in range(rng.randint(1, 3))]
        verdicts = {}
        expected = set()
        for insp in inspectors:
            for dim in dims:
                if rng.random() < 0.5:
                    verdicts[(insp, dim)] = f"FAIL: {dim} broken by {insp}"
                    expected.add((dim, insp))
                else:
                    verdicts[(insp, dim)] = "PASS"
        runtime = ProviderRuntime()

        def isolated(profile, request, table=verdicts):
            match = re.search(r"Dimension: (\S+)", request.content_text())
            return table.get((profile.agent_id, match.group(1)), "PASS")

        for insp in inspectors:
            runtime.register_backend(insp, ScriptedBackend(generate_fn=isolated))
        pool = inspect_all(
            Candidate(candidate_id="c", text="t", round=1, generator_agent_id="g"),
            make_conditions(*dims),
            [make_profile(i, Role.INSPECTOR) for i in inspectors],
            runtime=runtime,
        )
        observed = {(f.dimension_id, f.inspector_agent_id) for f in pool.failing()}
        if observed == expected:
            lossless += 1

    # constructed lossy chain: all three dimensions fail, the middle hop
    # summarizes away the first carried failure
    chain_runtime = ProviderRuntime()

    def chain_step(profile, request):
        text = request.content_text()
        dim = re.search(r"evaluate dimension (\S+):", text).group(1)
        carried = [l for l in text.splitlines() if l.startswith(("PASS ", "FAIL "))]
        if profile.agent_id == "i2":
            carried = [l for l in carried if not l.startswith("FAIL ")] + [
                l for l in carried if l.startswith("FAIL ")
            ][1:]
        carried.append(f"FAIL {dim}: {dim} broken")
        return "\n".join(carried)

    for insp in ("i1", "i2"):
        chain_runtime.register_backend(insp, ScriptedBackend(generate_fn=chain_step))
    chain_pool = inspect_all(
        Candidate(candidate_id="c", text="t", round=1, generator_agent_id="g"),
        make_conditions("d1", "d2", "d3"),
        [make_profile("i1", Role.INSPECTOR), make_profile("i2", Role.INSPECTOR)],
        topology=CENTRALIZED_CHAIN,
        runtime=chain_runtime,
    )
    dropped = 3 - len(chain_pool.findings)
    elapsed = time.perf_counter() - started
    ok = lossless == trials and dropped >= 1 and elapsed < 10.0
    report(
        "Lossless feedback pooling",
        ok,
        f"lossless {lossless}/{trials}, chain dropped {dropped}, {elapsed:.2f}s",
    )


def test_vote_selection_against_oracle():
    """1000 random matrices agree with the brute-force oracle; invariances hold."""
    rng = random.Random(777)
    agreements = 0
    invariant_rows = 0
    invariant_shift = 0
    trials = 1000
    for trial in range(trials):
        n = rng.randint(1, 20)
        m = rng.randint(1, 20)
        quantized = trial % 2 == 0
        def cell():
            return rng.choice([0.0, 0.5, 1.0]) if quantized else rng.uniform(0.2, 0.8)
        scores = [[cell() for _ in range(n)] for _ in range(m)]
        if trial % 10 == 0 and n >= 2:
            for row in scores:  # forced tie: duplicate the first column
                row[1] = row[0]
        matrix = VoteMatrix(
            tuple(f"c{i}" for i in range(n)),
            tuple(f"r{j}" for j in range(m)),
            tuple(tuple(row) for row in scores),
        )
        winner = vote_select(matrix)
        if winner == brute_force_select(matrix):
            agreements += 1
        perm = list(range(m))
        rng.shuffle(perm)
        permuted = VoteMatrix(
            matrix.candidates,
            tuple(matrix.reviewers[i] for i in perm),
            tuple(matrix.scores[i] for i in perm),
        )
        if vote_select(permuted) == winner:
            invariant_rows += 1
        shifted_rows = []
        for row in scores:
            delta = rng.uniform(-0.15, 0.15) if not quantized else 0.0
            shifted_rows.append(tuple(v + delta for v in row))
        shifted = VoteMatrix(matrix.candidates, matrix.reviewers, tuple(shifted_rows))
        if vote_select(shifted) == winner:
            invariant_shift += 1
    ok = agreements == trials and invariant_rows == trials and invariant_shift == trials
    report(
        "Vote selection vs oracle",
        ok,
        f"oracle {agreements}/{trials}, row-perm {invariant_rows}, shift {invariant_shift}",
    )


def test_ga_population_and_mutation():
    """Population invariant, elitist monotonicity, and the mutation rate bound."""
    task = make_task()
    generators = [make_profile(f"g{i}", Role.GENERATOR, seed=i + 1) for i in range(2)]

    def fitness(candidate: Candidate) -> float:
        targets = ("river", "lantern", "harbor", "stone")
        return sum(1 for t in targets if t in candidate.text) / len(targets)

    size_ok = True
    monotone_ok = True
    for seed in range(100):
        config = GAConfig(
            population_size=4,
            generations=4,
            mutation_probability=0.5,
            elitism=True,
            quality_threshold=1.0,
            rng_seed=seed,
        )
        _, history = ga_run(task, generators, fitness, config)
        if not all(len(g.fitness_values) == 4 for g in history):
            size_ok = False
        maxima = [max(g.fitness_values) for g in history]
        if not all(b >= a for a, b in zip(maxima, maxima[1:])):
            monotone_ok = False

    rng = random.Random(314)
    ids = IdFactory(0)
    base = Candidate(candidate_id="c", text="alpha beta gamma", round=0, generator_agent_id="g")
    mutated = sum(
        1 for _ in range(10_000) if ga_mutate(base, None, 0.5, rng, ids).candidate_id != "c"
    )
    rate = mutated / 10_000
    rate_ok = abs(rate - 0.5) <= 0.02
    ok = size_ok and monotone_ok and rate_ok
    report(
        "GA invariants",
        ok,
        f"size_ok={size_ok}, monotone_ok={monotone_ok}, mutation_rate={rate:.4f}",
    )


def test_metrics_arithmetic():
    """Perplexity e**2 (1e-9), relevance identity (1e-9), published tally split."""
    runtime = ProviderRuntime()
    runtime.register_backend(
        "judge", ScriptedBackend(score_fn=lambda p, t: [-1.0, -2.0, -3.0])
    )
    judge = make_profile("judge", Role.JUDGE)
    ppl = perplexity([("c1", "a b c")], judge, runtime).aggregate
    ppl_ok = abs(ppl - math.e**2) <= 1e-9

    rel = relevance("the same text", "the same text", judge, ProviderRuntime())
    rel_ok = abs(rel - 1.0) <= 1e-9

    records = (
        [_rec(f"a{i}", Verdict.ADOPTED) for i in range(50)]
        + [_rec(f"p{i}", Verdict.PARTIALLY_ADOPTED) for i in range(55)]
        + [_rec(f"r{i}", Verdict.REJECTED) for i in range(45)]
    )
    tally = hrpe_tally(records)
    rounded = tuple(round(r, 4) for r in tally.rates)
    tally_ok = rounded == (0.3333, 0.3667, 0.3000)
    ok = ppl_ok and rel_ok and tally_ok
    report(
        "Metrics arithmetic",
        ok,
        f"ppl={ppl:.9f}, relevance={rel}, rates={rounded}",
    )


def _rec(cid: str, verdict: Verdict) -> HRPERecord:
    return HRPERecord(
        candidate_id=cid,
        verdict=verdict,
        reviewer_id="rev-1",
        timestamp=datetime(2024, 1, 1, tzinfo=timezone.utc),
        edited_text="edited" if verdict == Verdict.PARTIALLY_ADOPTED else None,
    )


def test_replay_determinism_cli(tmp_path):
    """Two CLI runs of the shipped full-variant fixture digest identically."""
    started = time.perf_counter()
    digests = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        proc = subprocess.run(
            [
                sys.executable,
                "-m",
                "ctgcrew.cli",
                "run",
                "--config",
                str(FIXTURES / "run_config.json"),
                "--variant",
                "full",
                "--seed",
                "42",
                "--out",
                str(out),
            ],
            capture_output=True,
            text=True,
            cwd=REPO,
        )
        assert proc.returncode == 0, proc.stderr
        run_id = proc.stdout.strip().splitlines()[-1]
        digests.append(file_digest(out / run_id / "ledger.jsonl"))
    elapsed = time.perf_counter() - started
    ok = digests[0] == digests[1] and elapsed < 30.0
    report(
        "Replay determinism",
        ok,
        f"digest={digests[0][:12]}…, {elapsed:.2f}s for both runs",
    )


def test_variant_coverage(tmp_path):
    """All 8 variants run end-to-end; ledger stage sets match the contract."""
    failures = []
    for variant in Variant:
        cfg = RunConfig.from_file(
            FIXTURES / "run_config.json",
            variant={"name": variant.value, "voting_stage": False},
            output_dir=str(tmp_path / variant.value),
            metrics=[],
        )
        run_id = run_pipeline(cfg)
        entries = read_ledger(Path(cfg.output_dir) / run_id / "ledger.jsonl")
        stages = {e.payload["stage"] for e in entries if "stage" in e.payload}
        expected = set(variant_stage_contract(cfg.variant))
        if stages != expected:
            failures.append(f"{variant.value}: {sorted(stages)} != {sorted(expected)}")
        item_failures = [e for e in entries if e.payload.get("event") == "item_failed"]
        if item_failures:
            failures.append(f"{variant.value}: {len(item_failures)} items failed")
    report(
        "Variant coverage",
        not failures,
        "; ".join(failures) if failures else "8/8 variants match the contract table",
    )


def test_service_round_trip(tmp_path):
    """Scripted HTTP client over a live socket: review all, tally, 409 on dup."""
    import threading

    import httpx
    import uvicorn

    from ctgcrew.service import create_app

    cfg = RunConfig.from_file(
        FIXTURES / "run_config.json",
        output_dir=str(tmp_path / "runs"),
        metrics=[],
    )
    app = create_app(cfg, runs_root=tmp_path / "runs")
    server = uvicorn.Server(
        uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started and time.time() < deadline:
        time.sleep(0.02)
    assert server.started, "service did not start"
    port = server.servers[0].sockets[0].getsockname()[1]
    base = f"http://127.0.0.1:{port}"

    try:
        with httpx.Client(base_url=base, timeout=10.0) as client:
            accepted = client.post("/v1/runs", json={"variant": "continuation", "seed": 5})
            assert accepted.status_code == 202
            run_id = accepted.json()["run_id"]
            while True:
                status = client.get(f"/v1/runs/{run_id}").json()
                if status["status"] in ("completed", "failed"):
                    break
                time.sleep(0.05)
            assert status["status"] == "completed"
            run_id = status["run_id"]
            items = client.get(f"/v1/runs/{run_id}/candidates").json()["items"]
            verdict_plan = (
                ["adopted"] * 2 + ["partially_adopted"] * 3 + ["rejected"] * 5
            )
            for item, verdict in zip(items, verdict_plan):
                body = {"verdict": verdict, "reviewer_id": "rev-h1"}
                if verdict == "partially_adopted":
                    body["edited_text"] = item["candidate_text"] + " (edited)"
                response = client.post(f"/v1/review/{item['candidate_id']}", json=body)
                assert response.status_code == 200, response.text
            duplicate = client.post(
                f"/v1/review/{items[0]['candidate_id']}",
                json={"verdict": "adopted", "reviewer_id": "rev-h1"},
            )
            tally = client.get(f"/v1/review/tally?run={run_id}").json()
        counts_ok = tally["counts"] == {"adopted": 2, "partial": 3, "rejected": 5}
        ok = counts_ok and duplicate.status_code == 409
        report(
            "Service round-trip",
            ok,
            f"counts={tally['counts']}, duplicate={duplicate.status_code}",
        )
    finally:
        server.should_exit = True
        thread.join(timeout=5)
