"""Project directory state: inputs, annotations, rounds, checkpoints, jobs.

A project is a directory of plain files, so every mutation is a small
atomic file write and a crash between any two operations loses nothing but
an in-flight training job. All mutating methods take the project lock;
reads of immutable inputs (detections, embeddings) are cached.
"""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path
from typing import Sequence

from . import io
from .association import Association
from .config import ProjectConfig
from .core import Annotation, BoundingBox, Detection, EmbeddingMatrix, Tracklet
from .tracklets import generate_tracklets


class ProjectError(Exception):
    pass


class Project:
    """Filesystem-backed state for one tracking project."""

    def __init__(self, directory: str | Path):
        self.dir = Path(directory)
        if not self.dir.is_dir():
            raise ProjectError(f"{self.dir} is not a directory")
        config_path = self.dir / "config.json"
        if not config_path.exists():
            raise ProjectError(f"{config_path} missing")
        self.config = ProjectConfig.load(config_path)
        self.lock = threading.RLock()
        self._detections: list[Detection] | None = None
        self._embeddings: EmbeddingMatrix | None = None
        self._tracklets: list[Tracklet] | None = None
        (self.dir / "checkpoints").mkdir(exist_ok=True)
        (self.dir / "associations").mkdir(exist_ok=True)

    # -- inputs -------------------------------------------------------------

    @property
    def detections_path(self) -> Path:
        return self.dir / "detections.csv"

    @property
    def ground_truth_path(self) -> Path:
        return self.dir / "gt.csv"

    @property
    def frames_dir(self) -> Path:
        return self.dir / "frames"

    def detections(self) -> list[Detection]:
        if self._detections is None:
            self._detections = io.load_detections(self.detections_path)
        return self._detections

    def embeddings(self) -> EmbeddingMatrix:
        if self._embeddings is None:
            self._embeddings = io.load_embeddings(
                self.dir / "embeddings.bin", expected_dim=self.config.embedding_dim)
        return self._embeddings

    def has_ground_truth(self) -> bool:
        return self.ground_truth_path.exists()

    def ground_truth(self) -> list[tuple[int, int, BoundingBox]]:
        return io.load_ground_truth(self.ground_truth_path)

    def has_frames(self) -> bool:
        return self.frames_dir.is_dir()

    def frame_image_path(self, frame: int) -> Path:
        """Frames are stored 1-based: frame 0 lives in frames/000001.jpg."""
        return self.frames_dir / f"{frame + 1:06d}.jpg"

    # -- tracklets ----------------------------------------------------------

    def tracklets(self, regenerate: bool = False) -> list[Tracklet]:
        """Load tracklets, building and persisting them on first use."""
        path = self.dir / "tracklets.json"
        if self._tracklets is None or regenerate:
            if path.exists() and not regenerate:
                self._tracklets = io.load_tracklets(path)
            else:
                with self.lock:
                    self._tracklets = generate_tracklets(self.detections(), self.config)
                    io.save_tracklets(path, self._tracklets)
        return self._tracklets

    def tracklet_by_id(self, tracklet_id: int) -> Tracklet | None:
        for t in self.tracklets():
            if t.id == tracklet_id:
                return t
        return None

    # -- annotations and rounds ----------------------------------------------

    def annotations(self) -> list[Annotation]:
        path = self.dir / "annotations.json"
        if not path.exists():
            return []
        return io.load_annotations(path)

    def add_annotation(self, tracklet_id: int, identity: int) -> Annotation:
        if not 0 <= identity <= self.config.n_players:
            raise ValueError(f"identity must be in [0, {self.config.n_players}]")
        with self.lock:
            record = Annotation(tracklet_id, identity, self.state()["round"])
            annotations = self.annotations() + [record]
            io.save_annotations(self.dir / "annotations.json", annotations)
        return record

    def add_annotations(self, pairs: Sequence[tuple[int, int]]) -> list[Annotation]:
        return [self.add_annotation(tid, identity) for tid, identity in pairs]

    # -- mutable state --------------------------------------------------------

    def state(self) -> dict:
        path = self.dir / "state.json"
        if not path.exists():
            return {"v": 1, "round": 1, "latest_checkpoint": None, "checkpoint_hash": None}
        return json.loads(path.read_text())

    def _write_state(self, state: dict) -> None:
        io._atomic_write_text(self.dir / "state.json", json.dumps(state))

    def advance_round(self) -> int:
        """Close the current annotation round (called when training is
        triggered); returns the round that just closed."""
        with self.lock:
            state = self.state()
            closed = state["round"]
            state["round"] = closed + 1
            self._write_state(state)
        return closed

    def set_latest_checkpoint(self, path: Path, digest: str, round_: int) -> None:
        with self.lock:
            state = self.state()
            state["latest_checkpoint"] = str(path.relative_to(self.dir))
            state["checkpoint_hash"] = digest
            state["checkpoint_round"] = round_
            self._write_state(state)

    def latest_checkpoint(self) -> tuple[Path, str, int] | None:
        """(path, sha256, round that produced it), or None before any
        training."""
        state = self.state()
        if not state.get("latest_checkpoint"):
            return None
        return (self.dir / state["latest_checkpoint"], state["checkpoint_hash"],
                state.get("checkpoint_round", 1))

    # -- jobs ------------------------------------------------------------------

    def jobs(self) -> dict:
        path = self.dir / "jobs.json"
        if not path.exists():
            return {"v": 1, "jobs": {}}
        return json.loads(path.read_text())

    def write_job(self, job: dict) -> None:
        with self.lock:
            doc = self.jobs()
            doc["jobs"][job["id"]] = job
            io._atomic_write_text(self.dir / "jobs.json", json.dumps(doc))

    def job(self, job_id: str) -> dict | None:
        return self.jobs()["jobs"].get(job_id)

    def new_job_id(self) -> str:
        with self.lock:
            return f"job-{len(self.jobs()['jobs']) + 1:04d}"

    def fail_interrupted_jobs(self) -> int:
        """Crash recovery: any job still marked queued or running when the
        project is opened did not survive its process."""
        with self.lock:
            doc = self.jobs()
            n = 0
            for job in doc["jobs"].values():
                if job["state"] in ("queued", "running"):
                    job["state"] = "failed"
                    job["error"] = "interrupted by restart"
                    job["finished"] = time.time()
                    n += 1
            if n:
                io._atomic_write_text(self.dir / "jobs.json", json.dumps(doc))
        return n

    # -- associations ------------------------------------------------------------

    def save_association(self, doc: dict) -> Path:
        with self.lock:
            existing = sorted((self.dir / "associations").glob("[0-9]*.json"))
            doc = dict(doc)
            doc["index"] = len(existing) + 1
            path = self.dir / "associations" / f"{doc['index']:04d}-{doc['method']}.json"
            io.save_association_doc(path, doc)
            io.save_association_doc(self.dir / "associations" / "latest.json", doc)
        return path

    def latest_association(self) -> dict | None:
        path = self.dir / "associations" / "latest.json"
        if not path.exists():
            return None
        return io.load_association_doc(path)

    def latest_association_object(self) -> Association | None:
        doc = self.latest_association()
        return Association.from_doc(doc) if doc else None
