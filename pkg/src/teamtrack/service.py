"""HTTP service for the incremental annotation loop.

One process serves one project directory: tracklet listings for the grid
UI, annotation writes, background training jobs, association runs and
metrics. All state lives in the project's files, so restarting the server
loses nothing except an in-flight training job, which is marked failed.
"""

from __future__ import annotations

import io as stdio
import threading
import time
from pathlib import Path

from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .core import Tracklet, effective_annotations, resample_indices
from .pipeline import METHODS, run_association, run_metrics, run_training
from .project import Project, ProjectError


class AnnotationBody(BaseModel):
    tracklet_id: int
    identity: int


class TrainBody(BaseModel):
    alpha: int = 0
    seed: int = 0


class AssociateBody(BaseModel):
    method: str = "iterative"


class JobRunner:
    """At most one training job at a time, run on a background thread with
    per-epoch progress persisted to the project."""

    def __init__(self, project: Project):
        self.project = project
        self._lock = threading.Lock()

    def active_job(self) -> dict | None:
        for job in self.project.jobs()["jobs"].values():
            if job["state"] in ("queued", "running"):
                return job
        return None

    def start(self, alpha: int, seed: int) -> dict:
        with self._lock:
            if self.active_job() is not None:
                raise ProjectError("a training job is already running")
            job_id = self.project.new_job_id()
            round_ = self.project.advance_round()
            job = {
                "id": job_id,
                "state": "queued",
                "alpha": alpha,
                "seed": seed,
                "round": round_,
                "epoch": 0,
                "total_epochs": self.project.config.epochs,
                "history": [],
                "created": time.time(),
            }
            self.project.write_job(job)
        thread = threading.Thread(target=self._run, args=(job,), daemon=True)
        thread.start()
        return job

    def _run(self, job: dict) -> None:
        job["state"] = "running"
        self.project.write_job(job)

        def on_epoch(epoch: int, total: int, row: dict) -> None:
            job["epoch"] = epoch
            job["total_epochs"] = total
            job["history"].append(row)
            self.project.write_job(job)

        try:
            result = run_training(self.project, job["alpha"], job["seed"],
                                  job["round"], epoch_callback=on_epoch)
            job["state"] = "done"
            job["checkpoint"] = result["checkpoint"]
            job["checkpoint_hash"] = result["checkpoint_hash"]
            job["n_annotated"] = result["n_annotated"]
        except Exception as exc:
            job["state"] = "failed"
            job["error"] = str(exc)
        job["finished"] = time.time()
        self.project.write_job(job)


def _summary(t: Tracklet, annotated: dict, entries: dict, class_scores: dict,
             has_frames: bool) -> dict:
    identity = provenance = score = None
    if t.id in annotated:
        identity, provenance, score = annotated[t.id], "annotated", 1.0
    elif t.id in entries:
        e = entries[t.id]
        identity, provenance, score = e["identity"], e["provenance"], e["score"]
    return {
        "id": t.id,
        "start_frame": t.start_frame,
        "end_frame": t.end_frame,
        "length": len(t),
        "identity": identity,
        "provenance": provenance,
        "score": score,
        "annotated": t.id in annotated,
        "class_scores": class_scores.get(str(t.id)),
        "has_thumbnail": has_frames,
    }


def create_app(project_dir: str | Path, frontend_dir: str | Path | None = None) -> FastAPI:
    """Build the application over one project directory.

    When ``frontend_dir`` is given, its static build is served at the root
    alongside the /api routes.
    """
    project = Project(project_dir)
    project.fail_interrupted_jobs()
    project.tracklets()
    runner = JobRunner(project)

    app = FastAPI(title="teamtrack service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    app.state.project = project

    def association_state() -> tuple[dict, dict, dict]:
        annotated = effective_annotations(project.annotations())
        doc = project.latest_association() or {}
        entries = {e["tracklet_id"]: e for e in doc.get("entries", [])}
        return annotated, entries, doc.get("class_scores", {})

    @app.get("/api/project")
    def get_project() -> dict:
        annotations = project.annotations()
        state = project.state()
        latest = project.latest_checkpoint()
        active = runner.active_job()
        return {
            "v": 1,
            "directory": str(project.dir),
            "config": project.config.to_dict(),
            "round": state["round"],
            "counts": {
                "detections": len(project.detections()),
                "tracklets": len(project.tracklets()),
                "annotations": len(annotations),
                "annotated_tracklets": len(effective_annotations(annotations)),
            },
            "has_ground_truth": project.has_ground_truth(),
            "has_frames": project.has_frames(),
            "latest_checkpoint": None if latest is None else {
                "path": str(latest[0].relative_to(project.dir)),
                "hash": latest[1],
                "round": latest[2],
            },
            "active_job": None if active is None else active["id"],
        }

    @app.get("/api/tracklets")
    def list_tracklets(identity: int | None = None) -> list[dict]:
        annotated, entries, scores = association_state()
        has_frames = project.has_frames()
        out = [_summary(t, annotated, entries, scores, has_frames)
               for t in project.tracklets()]
        if identity is not None:
            out = [s for s in out if s["identity"] == identity]
        return out

    @app.get("/api/tracklets/{tracklet_id}")
    def get_tracklet(tracklet_id: int) -> dict:
        t = project.tracklet_by_id(tracklet_id)
        if t is None:
            raise HTTPException(404, f"unknown tracklet {tracklet_id}")
        annotated, entries, scores = association_state()
        has_frames = project.has_frames()
        detail = _summary(t, annotated, entries, scores, has_frames)
        n = min(project.config.samples_per_track, len(t))
        sampled = [t.detections[i] for i in resample_indices(len(t), n)]
        detail["samples"] = [
            {"frame": d.frame, "box": list(d.box.as_ltwh()), "confidence": d.confidence}
            for d in sampled
        ]
        detail["crops"] = (
            [f"/api/tracklets/{t.id}/crops/{k}" for k in range(len(sampled))]
            if has_frames else []
        )
        return detail

    @app.get("/api/tracklets/{tracklet_id}/crops/{index}")
    def get_crop(tracklet_id: int, index: int) -> Response:
        t = project.tracklet_by_id(tracklet_id)
        if t is None:
            raise HTTPException(404, f"unknown tracklet {tracklet_id}")
        if not project.has_frames():
            raise HTTPException(404, "project has no frame images")
        try:
            from PIL import Image
        except ImportError:
            raise HTTPException(404, "image support not installed") from None
        n = min(project.config.samples_per_track, len(t))
        indices = resample_indices(len(t), n)
        if not 0 <= index < len(indices):
            raise HTTPException(404, f"crop index out of range 0..{len(indices) - 1}")
        det = t.detections[indices[index]]
        frame_path = project.frame_image_path(det.frame)
        if not frame_path.exists():
            raise HTTPException(404, f"missing frame image {frame_path.name}")
        with Image.open(frame_path) as img:
            box = det.box
            crop = img.crop((round(box.left), round(box.top),
                             round(box.right), round(box.bottom)))
            buf = stdio.BytesIO()
            crop.convert("RGB").save(buf, format="JPEG")
        return Response(buf.getvalue(), media_type="image/jpeg")

    @app.post("/api/annotations", status_code=201)
    def post_annotation(body: AnnotationBody) -> dict:
        if project.tracklet_by_id(body.tracklet_id) is None:
            raise HTTPException(404, f"unknown tracklet {body.tracklet_id}")
        if not 0 <= body.identity <= project.config.n_players:
            raise HTTPException(
                422, f"identity must be in [0, {project.config.n_players}]")
        record = project.add_annotation(body.tracklet_id, body.identity)
        return {"tracklet_id": record.tracklet_id, "identity": record.identity,
                "round": record.round}

    @app.post("/api/train", status_code=202)
    def post_train(body: TrainBody) -> dict:
        if body.alpha not in (0, 1):
            raise HTTPException(422, "alpha must be 0 or 1")
        if not effective_annotations(project.annotations()):
            raise HTTPException(409, "no annotations to train on")
        try:
            job = runner.start(body.alpha, body.seed)
        except ProjectError as exc:
            raise HTTPException(409, str(exc)) from None
        return {"job_id": job["id"], "state": job["state"], "round": job["round"]}

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str) -> dict:
        job = project.job(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id}")
        return job

    @app.post("/api/associate")
    def post_associate(body: AssociateBody) -> dict:
        if body.method not in METHODS:
            raise HTTPException(422, f"method must be one of {list(METHODS)}")
        if runner.active_job() is not None:
            raise HTTPException(409, "a training job is running")
        try:
            return run_association(project, body.method)
        except ProjectError as exc:
            raise HTTPException(409, str(exc)) from None

    @app.get("/api/associations/latest")
    def get_latest_association() -> dict:
        doc = project.latest_association()
        if doc is None:
            raise HTTPException(404, "no association computed yet")
        return doc

    @app.get("/api/metrics")
    def get_metrics() -> dict:
        try:
            report = run_metrics(project)
        except ProjectError as exc:
            raise HTTPException(404, str(exc)) from None
        doc = project.latest_association() or {}
        return {
            "v": 1,
            "report": report.to_dict(),
            "method": doc.get("method"),
            "round": doc.get("round"),
            "checkpoint_hash": doc.get("checkpoint_hash"),
        }

    if frontend_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="ui")

    return app
