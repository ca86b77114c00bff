"""Project directory state: persistence, rounds, jobs, crash recovery."""

import json

import pytest

from teamtrack.core import effective_annotations
from teamtrack.project import Project, ProjectError


class TestOpening:
    def test_missing_directory_rejected(self, tmp_path):
        with pytest.raises(ProjectError):
            Project(tmp_path / "nope")

    def test_missing_config_rejected(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(ProjectError):
            Project(tmp_path / "empty")

    def test_opening_creates_working_dirs(self, small_project):
        assert (small_project.dir / "checkpoints").is_dir()
        assert (small_project.dir / "associations").is_dir()


class TestTracklets:
    def test_built_once_and_persisted(self, small_project):
        tracklets = small_project.tracklets()
        assert tracklets
        assert (small_project.dir / "tracklets.json").exists()
        # a second project over the same directory loads the same tracklets
        again = Project(small_project.dir)
        assert [t.id for t in again.tracklets()] == [t.id for t in tracklets]

    def test_regenerate_rebuilds(self, small_project):
        first = small_project.tracklets()
        rebuilt = small_project.tracklets(regenerate=True)
        assert [t.id for t in rebuilt] == [t.id for t in first]

    def test_tracklet_by_id(self, small_project):
        t = small_project.tracklets()[0]
        assert small_project.tracklet_by_id(t.id) is t
        assert small_project.tracklet_by_id(10_000) is None


class TestAnnotations:
    def test_identity_range_enforced(self, small_project):
        tid = small_project.tracklets()[0].id
        n = small_project.config.n_players
        with pytest.raises(ValueError):
            small_project.add_annotation(tid, -1)
        with pytest.raises(ValueError):
            small_project.add_annotation(tid, n + 1)
        assert small_project.add_annotation(tid, 0).identity == 0
        assert small_project.add_annotation(tid, n).identity == n

    def test_log_appends_and_latest_wins(self, small_project):
        tid = small_project.tracklets()[0].id
        small_project.add_annotation(tid, 1)
        small_project.add_annotation(tid, 2)
        log = small_project.annotations()
        assert len(log) == 2
        assert effective_annotations(log) == {tid: 2}

    def test_round_recorded(self, small_project):
        tid = small_project.tracklets()[0].id
        first = small_project.add_annotation(tid, 1)
        assert first.round == 1
        small_project.advance_round()
        second = small_project.add_annotation(tid, 2)
        assert second.round == 2

    def test_survives_reopen(self, small_project):
        tid = small_project.tracklets()[0].id
        small_project.add_annotation(tid, 1)
        again = Project(small_project.dir)
        assert effective_annotations(again.annotations()) == {tid: 1}


class TestRoundsAndCheckpoints:
    def test_default_state(self, small_project):
        state = small_project.state()
        assert state["v"] == 1
        assert state["round"] == 1
        assert small_project.latest_checkpoint() is None

    def test_advance_round_returns_closed_round(self, small_project):
        assert small_project.advance_round() == 1
        assert small_project.advance_round() == 2
        assert small_project.state()["round"] == 3

    def test_checkpoint_round_trip(self, small_project):
        path = small_project.dir / "checkpoints" / "0001.npz"
        path.write_bytes(b"weights")
        small_project.set_latest_checkpoint(path, "abc123", 2)
        got_path, digest, round_ = small_project.latest_checkpoint()
        assert got_path == path
        assert digest == "abc123"
        assert round_ == 2
        # state survives a reopen
        assert Project(small_project.dir).latest_checkpoint()[1] == "abc123"


class TestJobs:
    def test_ids_are_sequential(self, small_project):
        a = small_project.new_job_id()
        small_project.write_job({"id": a, "state": "done"})
        b = small_project.new_job_id()
        assert (a, b) == ("job-0001", "job-0002")

    def test_write_and_read_back(self, small_project):
        job = {"id": small_project.new_job_id(), "state": "queued", "epoch": 0}
        small_project.write_job(job)
        assert small_project.job(job["id"]) == job
        assert small_project.job("job-9999") is None

    def test_interrupted_jobs_marked_failed(self, small_project):
        small_project.write_job({"id": "job-0001", "state": "done"})
        small_project.write_job({"id": "job-0002", "state": "running"})
        small_project.write_job({"id": "job-0003", "state": "queued"})
        n = small_project.fail_interrupted_jobs()
        assert n == 2
        assert small_project.job("job-0001")["state"] == "done"
        for job_id in ("job-0002", "job-0003"):
            job = small_project.job(job_id)
            assert job["state"] == "failed"
            assert job["error"] == "interrupted by restart"
            assert "finished" in job


class TestAssociations:
    def test_none_before_first_save(self, small_project):
        assert small_project.latest_association() is None
        assert small_project.latest_association_object() is None

    def test_saves_are_indexed_and_latest_tracks(self, small_project):
        first = {"method": "iterative", "entries": []}
        second = {"method": "rnmf", "entries": []}
        p1 = small_project.save_association(first)
        p2 = small_project.save_association(second)
        assert p1.name == "0001-iterative.json"
        assert p2.name == "0002-rnmf.json"
        latest = small_project.latest_association()
        assert latest["method"] == "rnmf"
        assert latest["index"] == 2

    def test_doc_round_trips_entries(self, small_project):
        doc = {
            "method": "iterative",
            "entries": [{"tracklet_id": 4, "identity": 2,
                         "provenance": "annotated", "score": 1.0}],
        }
        small_project.save_association(doc)
        obj = small_project.latest_association_object()
        assert obj.identity_of(4) == 2

    def test_latest_file_is_valid_json(self, small_project):
        small_project.save_association({"method": "iterative", "entries": []})
        raw = (small_project.dir / "associations" / "latest.json").read_text()
        assert json.loads(raw)["method"] == "iterative"
