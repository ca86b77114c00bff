"""Headless reproduction of the incremental-annotation workflow.

A simulated user labels a small wave of tracklets per round (one per player
plus a couple of not-tracked examples); after each round of interest a
classifier is trained from scratch on the accumulated labels, every
tracklet is associated, and the result is scored against ground truth.
Tasks (seed, round, loss mix, association method) are independent, so they
can fan out over worker processes; results are deterministic per task
either way.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .core import Tracklet, gather_tracklet_features
from .metrics import (
    compute_metrics,
    frame_objects_from_association,
    frame_objects_from_records,
    team_range,
)
from .model import TrackletClassifier
from .pipeline import associate_from_outputs, plan_annotation_wave
from .project import Project
from .training import TrainingSet, train


@dataclass(frozen=True)
class ProtocolTask:
    """One training/association/scoring run of the protocol."""

    seed: int
    round_no: int   # annotation rounds accumulated before training
    alpha: int      # triplet-loss weight
    method: str     # "iterative" or "rnmf"


@dataclass
class ProtocolResult:
    seed: int
    round_no: int
    alpha: int
    method: str
    n_annotations: int
    idf1: float
    mota: float
    idsw: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def annotation_schedule(
    tracklets: list[Tracklet],
    records,
    n_players: int,
    rounds: int,
    per_player: int = 1,
    class0: int = 2,
    features: np.ndarray | None = None,
) -> list[dict[int, int]]:
    """Cumulative label sets after each simulated annotation round.

    Round r contains r waves of ``plan_annotation_wave``; the returned list
    has one tracklet-id to identity mapping per round. ``features`` (one
    appearance row per tracklet) lets the simulated user spread reject
    labels over distinct-looking bystanders.
    """
    schedule: list[dict[int, int]] = []
    labels: dict[int, int] = {}
    for _ in range(rounds):
        wave = plan_annotation_wave(tracklets, records, n_players,
                                    labels, per_player, class0, features)
        labels.update(dict(wave))
        schedule.append(dict(labels))
    return schedule


# Worker processes are forked after this is populated, so the big read-only
# arrays are shared by the fork snapshot instead of being pickled per task.
_SHARED: dict = {}


def _run_task(shared: dict, task: ProtocolTask) -> ProtocolResult:
    config = replace(shared["config"], triplet_weight=task.alpha, seed=task.seed)
    labels = shared["schedule"][task.round_no - 1]
    tracklets = shared["tracklets"]
    stacks = shared["stacks"]
    index_of = {t.id: i for i, t in enumerate(tracklets)}

    tids = sorted(labels)
    data = TrainingSet(
        inputs=stacks[[index_of[tid] for tid in tids]],
        labels=np.array([labels[tid] for tid in tids], dtype=np.intp),
        tracklet_ids=tids,
    )
    model = TrackletClassifier(config, seed=task.seed)
    train(model, data, task.seed)

    outputs = model.infer_all(stacks)
    association = associate_from_outputs(outputs, tracklets, labels,
                                         config, task.method)
    hyp = frame_objects_from_association(tracklets, association, config.n_players)
    report = compute_metrics(shared["gt"], hyp)
    return ProtocolResult(task.seed, task.round_no, task.alpha, task.method,
                          len(labels), report.idf1, report.mota, report.idsw)


def _pool_worker(task: ProtocolTask) -> ProtocolResult:
    return _run_task(_SHARED, task)


def run_protocol(
    project: Project,
    tasks: list[ProtocolTask],
    per_player: int = 1,
    class0: int = 2,
    processes: int | None = None,
) -> list[ProtocolResult]:
    """Run protocol tasks against a simulated project with ground truth.

    ``processes`` defaults to one worker per CPU (capped by the task
    count); pass 1 to force the serial path. Results come back in task
    order.
    """
    tracklets = project.tracklets()
    embeddings = project.embeddings()
    config = project.config
    rounds = max(t.round_no for t in tasks)
    for t in tasks:
        if t.round_no < 1:
            raise ValueError(f"round_no must be >= 1, got {t.round_no}")

    records = project.ground_truth()
    stacks = np.stack([
        gather_tracklet_features(t, embeddings, config.samples_per_track)
        for t in tracklets
    ]).astype(np.float32)
    shared = {
        "config": config,
        "tracklets": tracklets,
        "stacks": stacks,
        "schedule": annotation_schedule(tracklets, records, config.n_players,
                                        rounds, per_player, class0,
                                        features=stacks.mean(axis=1)),
        "gt": frame_objects_from_records(
            records, keep_identities=team_range(config.n_players)),
    }

    if processes is None:
        processes = min(len(tasks), os.cpu_count() or 1)
    if processes <= 1:
        return [_run_task(shared, t) for t in tasks]

    import multiprocessing

    _SHARED.update(shared)
    try:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(processes) as pool:
            return pool.map(_pool_worker, tasks)
    finally:
        _SHARED.clear()
