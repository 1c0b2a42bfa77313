"""Review service: protocol round-trip against the in-process app."""

from __future__ import annotations

import time
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from ctgcrew.pipelines import RunConfig
from ctgcrew.service import create_app

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture
def client(tmp_path) -> TestClient:
    cfg = RunConfig.from_file(
        FIXTURES / "run_config.json",
        output_dir=str(tmp_path / "runs"),
        metrics=[],
    )
    app = create_app(cfg, runs_root=tmp_path / "runs")
    return TestClient(app)


def wait_for_completion(client: TestClient, run_id: str, timeout: float = 30.0) -> dict:
    deadline = time.time() + timeout
    while time.time() < deadline:
        body = client.get(f"/v1/runs/{run_id}").json()
        if body["status"] in ("completed", "failed"):
            return body
        time.sleep(0.05)
    raise AssertionError("run did not finish in time")


def submit_and_wait(client: TestClient, **body) -> tuple[str, dict]:
    response = client.post("/v1/runs", json=body)
    assert response.status_code == 202
    run_id = response.json()["run_id"]
    status = wait_for_completion(client, run_id)
    assert status["status"] == "completed", status
    return status["run_id"], status


class TestRunsEndpoint:
    def test_submit_and_poll(self, client):
        run_id, status = submit_and_wait(client, variant="continuation", seed=7)
        assert status["candidate_count"] == 10

    def test_unknown_run_404(self, client):
        assert client.get("/v1/runs/nope").status_code == 404

    def test_candidates_listing(self, client):
        run_id, _ = submit_and_wait(client, variant="continuation", seed=8)
        items = client.get(f"/v1/runs/{run_id}/candidates").json()["items"]
        assert len(items) == 10
        first = items[0]
        assert set(first) == {
            "candidate_id",
            "item_id",
            "original_input",
            "candidate_text",
            "persona_brief",
            "round",
        }


class TestReviewFlow:
    def test_full_round_trip_tally(self, client):
        run_id, _ = submit_and_wait(client, variant="continuation", seed=9)
        items = client.get(f"/v1/runs/{run_id}/candidates").json()["items"]
        assert len(items) == 10
        # scripted split: 3 adopted, 4 partial, 3 rejected
        verdicts = (
            ["adopted"] * 3 + ["partially_adopted"] * 4 + ["rejected"] * 3
        )
        for item, verdict in zip(items, verdicts):
            body = {"verdict": verdict, "reviewer_id": "rev-h1"}
            if verdict == "partially_adopted":
                body["edited_text"] = item["candidate_text"] + " (tightened)"
            response = client.post(f"/v1/review/{item['candidate_id']}", json=body)
            assert response.status_code == 200, response.text
        tally = client.get(f"/v1/review/tally?run={run_id}").json()
        assert tally["counts"] == {"adopted": 3, "partial": 4, "rejected": 3}
        assert tally["total"] == 10
        assert tally["rates"]["adopted"] == pytest.approx(0.3)

    def test_duplicate_review_409(self, client):
        run_id, _ = submit_and_wait(client, variant="continuation", seed=10)
        items = client.get(f"/v1/runs/{run_id}/candidates").json()["items"]
        cid = items[0]["candidate_id"]
        body = {"verdict": "adopted", "reviewer_id": "rev-h1"}
        assert client.post(f"/v1/review/{cid}", json=body).status_code == 200
        assert client.post(f"/v1/review/{cid}", json=body).status_code == 409
        other = {"verdict": "rejected", "reviewer_id": "rev-h2"}
        assert client.post(f"/v1/review/{cid}", json=other).status_code == 200

    def test_partial_requires_differing_edit(self, client):
        run_id, _ = submit_and_wait(client, variant="continuation", seed=11)
        item = client.get(f"/v1/runs/{run_id}/candidates").json()["items"][0]
        cid = item["candidate_id"]
        missing = {"verdict": "partially_adopted", "reviewer_id": "r"}
        assert client.post(f"/v1/review/{cid}", json=missing).status_code == 400
        unchanged = {
            "verdict": "partially_adopted",
            "reviewer_id": "r",
            "edited_text": item["candidate_text"],
        }
        assert client.post(f"/v1/review/{cid}", json=unchanged).status_code == 400

    def test_unknown_candidate_404(self, client):
        body = {"verdict": "adopted", "reviewer_id": "r"}
        assert client.post("/v1/review/ghost", json=body).status_code == 404

    def test_bad_verdict_400(self, client):
        run_id, _ = submit_and_wait(client, variant="continuation", seed=12)
        item = client.get(f"/v1/runs/{run_id}/candidates").json()["items"][0]
        body = {"verdict": "maybe", "reviewer_id": "r"}
        assert client.post(f"/v1/review/{item['candidate_id']}", json=body).status_code == 400

    def test_missing_reviewer_400(self, client):
        run_id, _ = submit_and_wait(client, variant="continuation", seed=13)
        item = client.get(f"/v1/runs/{run_id}/candidates").json()["items"][0]
        response = client.post(
            f"/v1/review/{item['candidate_id']}", json={"verdict": "adopted"}
        )
        assert response.status_code == 400


class TestQueue:
    def test_queue_excludes_reviewed_for_reviewer(self, client):
        run_id, _ = submit_and_wait(client, variant="continuation", seed=14)
        queue = client.get(
            f"/v1/review/queue?run={run_id}&reviewer_id=rev-h1"
        ).json()
        assert len(queue["items"]) == 10
        cid = queue["items"][0]["candidate_id"]
        client.post(
            f"/v1/review/{cid}", json={"verdict": "adopted", "reviewer_id": "rev-h1"}
        )
        after = client.get(
            f"/v1/review/queue?run={run_id}&reviewer_id=rev-h1"
        ).json()
        assert len(after["items"]) == 9
        assert cid not in {i["candidate_id"] for i in after["items"]}
        other = client.get(
            f"/v1/review/queue?run={run_id}&reviewer_id=rev-h2"
        ).json()
        assert len(other["items"]) == 10

    def test_pagination_cursor(self, client):
        run_id, _ = submit_and_wait(client, variant="continuation", seed=15)
        first = client.get(f"/v1/review/queue?run={run_id}&limit=4").json()
        assert len(first["items"]) == 4
        assert first["cursor"] == "4"
        second = client.get(
            f"/v1/review/queue?run={run_id}&limit=4&cursor={first['cursor']}"
        ).json()
        assert len(second["items"]) == 4
        third = client.get(
            f"/v1/review/queue?run={run_id}&limit=4&cursor={second['cursor']}"
        ).json()
        assert len(third["items"]) == 2
        assert third["cursor"] is None
        seen = {
            i["candidate_id"]
            for page in (first, second, third)
            for i in page["items"]
        }
        assert len(seen) == 10

    def test_queue_unknown_run_404(self, client):
        assert client.get("/v1/review/queue?run=ghost").status_code == 404


class TestPersistence:
    def test_reviews_survive_restart(self, tmp_path):
        cfg = RunConfig.from_file(
            FIXTURES / "run_config.json",
            output_dir=str(tmp_path / "runs"),
            metrics=[],
        )
        app = create_app(cfg, runs_root=tmp_path / "runs")
        client = TestClient(app)
        run_id, _ = submit_and_wait(client, variant="continuation", seed=16)
        item = client.get(f"/v1/runs/{run_id}/candidates").json()["items"][0]
        client.post(
            f"/v1/review/{item['candidate_id']}",
            json={"verdict": "adopted", "reviewer_id": "rev-h1"},
        )
        # a fresh app over the same runs root sees the persisted review
        reborn = TestClient(create_app(cfg, runs_root=tmp_path / "runs"))
        tally = reborn.get(f"/v1/review/tally?run={run_id}").json()
        assert tally["counts"]["adopted"] == 1
        dup = reborn.post(
            f"/v1/review/{item['candidate_id']}",
            json={"verdict": "adopted", "reviewer_id": "rev-h1"},
        )
        assert dup.status_code == 409
