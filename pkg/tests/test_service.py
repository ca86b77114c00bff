"""HTTP service: the annotate/train/associate loop and its error contract."""

import shutil
import time

import pytest

pytest.importorskip("fastapi")
from fastapi.testclient import TestClient

from teamtrack.service import create_app
from teamtrack.simulate import SimConfig, simulate

from conftest import tiny_model_config


@pytest.fixture(scope="module")
def service_game(tmp_path_factory):
    """Small simulated game with a fast-training model config."""
    out = tmp_path_factory.mktemp("servicegame")
    simulate(SimConfig(n_players=2, n_distractors=1, frames=200,
                       embedding_dim=16, seed=3), out)
    tiny_model_config(n_players=2, embedding_dim=16, epochs=20).save(
        out / "config.json")
    return out


@pytest.fixture()
def client(service_game, tmp_path):
    dst = tmp_path / "proj"
    shutil.copytree(service_game, dst)
    return TestClient(create_app(dst))


def wait_for_job(client, job_id, deadline=180.0):
    start = time.time()
    while time.time() - start < deadline:
        job = client.get(f"/api/jobs/{job_id}").json()
        if job["state"] in ("done", "failed"):
            return job
        time.sleep(0.1)
    raise TimeoutError(f"job {job_id} did not finish")


class TestProjectEndpoint:
    def test_summary_shape(self, client):
        doc = client.get("/api/project").json()
        assert doc["v"] == 1
        assert doc["round"] == 1
        assert doc["counts"]["tracklets"] > 0
        assert doc["counts"]["annotations"] == 0
        assert doc["has_ground_truth"] is True
        assert doc["has_frames"] is False
        assert doc["latest_checkpoint"] is None
        assert doc["active_job"] is None


class TestTracklets:
    def test_listing_before_association(self, client):
        rows = client.get("/api/tracklets").json()
        assert rows
        for row in rows:
            assert row["identity"] is None
            assert row["provenance"] is None
            assert row["annotated"] is False
            assert row["has_thumbnail"] is False

    def test_detail_and_samples(self, client):
        first = client.get("/api/tracklets").json()[0]
        detail = client.get(f"/api/tracklets/{first['id']}").json()
        assert detail["id"] == first["id"]
        assert detail["samples"]
        for sample in detail["samples"]:
            assert len(sample["box"]) == 4
        assert detail["crops"] == []   # no frames directory

    def test_unknown_tracklet_404(self, client):
        assert client.get("/api/tracklets/99999").status_code == 404

    def test_crop_404_without_frames(self, client):
        tid = client.get("/api/tracklets").json()[0]["id"]
        assert client.get(f"/api/tracklets/{tid}/crops/0").status_code == 404


class TestAnnotations:
    def test_created(self, client):
        tid = client.get("/api/tracklets").json()[0]["id"]
        resp = client.post("/api/annotations",
                           json={"tracklet_id": tid, "identity": 1})
        assert resp.status_code == 201
        assert resp.json() == {"tracklet_id": tid, "identity": 1, "round": 1}
        doc = client.get("/api/project").json()
        assert doc["counts"]["annotations"] == 1
        assert doc["counts"]["annotated_tracklets"] == 1

    def test_unknown_tracklet_404(self, client):
        resp = client.post("/api/annotations",
                           json={"tracklet_id": 99999, "identity": 1})
        assert resp.status_code == 404

    def test_identity_out_of_range_422(self, client):
        tid = client.get("/api/tracklets").json()[0]["id"]
        for identity in (-1, 3):   # n_players is 2
            resp = client.post("/api/annotations",
                               json={"tracklet_id": tid, "identity": identity})
            assert resp.status_code == 422

    def test_relabel_latest_wins(self, client):
        tid = client.get("/api/tracklets").json()[0]["id"]
        client.post("/api/annotations", json={"tracklet_id": tid, "identity": 1})
        client.post("/api/annotations", json={"tracklet_id": tid, "identity": 2})
        row = client.get(f"/api/tracklets/{tid}").json()
        assert row["identity"] == 2
        assert row["provenance"] == "annotated"


class TestTrainValidation:
    def test_alpha_validated(self, client):
        assert client.post("/api/train", json={"alpha": 2}).status_code == 422

    def test_no_annotations_409(self, client):
        assert client.post("/api/train", json={"alpha": 0}).status_code == 409

    def test_unknown_job_404(self, client):
        assert client.get("/api/jobs/job-9999").status_code == 404


class TestAssociateValidation:
    def test_bad_method_422(self, client):
        resp = client.post("/api/associate", json={"method": "magic"})
        assert resp.status_code == 422

    def test_without_checkpoint_409(self, client):
        resp = client.post("/api/associate", json={"method": "iterative"})
        assert resp.status_code == 409

    def test_no_association_yet_404(self, client):
        assert client.get("/api/associations/latest").status_code == 404

    def test_metrics_requires_association(self, client):
        assert client.get("/api/metrics").status_code == 404


class TestFullLoop:
    def test_annotate_train_associate(self, client):
        rows = sorted(client.get("/api/tracklets").json(),
                      key=lambda r: -r["length"])
        picks = {rows[0]["id"]: 1, rows[1]["id"]: 2, rows[2]["id"]: 0}
        for tid, identity in picks.items():
            resp = client.post("/api/annotations",
                               json={"tracklet_id": tid, "identity": identity})
            assert resp.status_code == 201

        resp = client.post("/api/train", json={"alpha": 0, "seed": 1})
        assert resp.status_code == 202
        body = resp.json()
        assert body["round"] == 1

        # job exclusivity while the first one runs
        denied = client.post("/api/train", json={"alpha": 0, "seed": 2})
        assert denied.status_code == 409
        assert client.get("/api/project").json()["active_job"] == body["job_id"]
        denied = client.post("/api/associate", json={"method": "iterative"})
        assert denied.status_code == 409

        job = wait_for_job(client, body["job_id"])
        assert job["state"] == "done"
        assert job["epoch"] == job["total_epochs"]
        assert job["history"]
        assert all("loss" in row for row in job["history"])

        doc = client.get("/api/project").json()
        assert doc["round"] == 2               # training closed round 1
        assert doc["latest_checkpoint"]["hash"] == job["checkpoint_hash"]

        resp = client.post("/api/associate", json={"method": "iterative"})
        assert resp.status_code == 200
        assoc = resp.json()
        assert assoc["method"] == "iterative"
        assert assoc["checkpoint_hash"] == job["checkpoint_hash"]
        assert len(assoc["entries"]) == doc["counts"]["tracklets"]

        latest = client.get("/api/associations/latest").json()
        assert latest["checkpoint_hash"] == assoc["checkpoint_hash"]

        # annotations are immutable through the pipeline
        for tid, identity in picks.items():
            row = client.get(f"/api/tracklets/{tid}").json()
            assert row["identity"] == identity
            assert row["provenance"] == "annotated"
            assert row["score"] == 1.0

        # every tracklet now carries an identity and per-class scores
        for row in client.get("/api/tracklets").json():
            assert row["identity"] is not None
            assert len(row["class_scores"]) == 3   # players plus reject

        # the identity filter returns exactly the matching rows
        ones = client.get("/api/tracklets", params={"identity": 1}).json()
        assert ones
        assert all(r["identity"] == 1 for r in ones)
        assert any(r["id"] == rows[0]["id"] for r in ones)

        report = client.get("/api/metrics")
        assert report.status_code == 200
        body = report.json()
        assert body["checkpoint_hash"] == assoc["checkpoint_hash"]
        for key in ("idf1", "mota", "idsw"):
            assert key in body["report"]


class TestCrashRecovery:
    def test_interrupted_job_marked_failed_on_restart(self, service_game, tmp_path):
        dst = tmp_path / "proj"
        shutil.copytree(service_game, dst)
        first = TestClient(create_app(dst))
        tid = first.get("/api/tracklets").json()[0]["id"]
        first.post("/api/annotations", json={"tracklet_id": tid, "identity": 1})

        from teamtrack.project import Project
        Project(dst).write_job({"id": "job-0001", "state": "running",
                                "alpha": 0, "seed": 0, "round": 1})

        reopened = TestClient(create_app(dst))
        job = reopened.get("/api/jobs/job-0001").json()
        assert job["state"] == "failed"
        assert job["error"] == "interrupted by restart"
        # nothing else was lost
        row = reopened.get(f"/api/tracklets/{tid}").json()
        assert row["identity"] == 1
        assert reopened.get("/api/project").json()["counts"]["annotations"] == 1
