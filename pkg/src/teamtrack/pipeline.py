"""High-level operations over a project directory, shared by the CLI and
the HTTP service: train a classifier from the current annotations,
associate tracklets with a trained checkpoint, and score against ground
truth."""

from __future__ import annotations

import time
from collections.abc import Mapping
from dataclasses import replace
from pathlib import Path

import numpy as np

from .association import (
    AssignedIdentity,
    Association,
    PROV_UNASSIGNED,
    associate_iterative,
    associate_rnmf,
    build_similarity_matrix,
    rnmf_factorize,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .core import effective_annotations, gather_tracklet_features
from .metrics import (
    MetricsReport,
    compute_metrics,
    frame_objects_from_association,
    frame_objects_from_records,
    team_range,
)
from .model import TrackletClassifier
from .project import Project, ProjectError
from .training import (
    EpochCallback,
    build_training_set,
    classify_tracklets,
    loss_curve_csv,
    train,
)

METHODS = ("iterative", "rnmf")


def run_training(
    project: Project,
    alpha: int,
    seed: int,
    round_: int,
    epoch_callback: EpochCallback | None = None,
) -> dict:
    """Train on the project's annotations and persist a checkpoint.

    The project config's triplet weight and seed are overridden by the
    call; the closed annotation round is recorded with the checkpoint so
    associations can be traced back to it.
    """
    config = replace(project.config, triplet_weight=alpha, seed=seed)
    data = build_training_set(
        project.tracklets(), project.embeddings(), project.annotations(), config)
    model = TrackletClassifier(config, seed=seed)
    history = train(model, data, seed, epoch_callback=epoch_callback)
    path = project.dir / "checkpoints" / f"round-{round_:03d}-alpha-{alpha}-seed-{seed}.ckpt"
    digest = save_checkpoint(model, path)
    path.with_suffix(".loss.csv").write_text(loss_curve_csv(history))
    project.set_latest_checkpoint(path, digest, round_)
    return {
        "checkpoint": str(path),
        "checkpoint_hash": digest,
        "round": round_,
        "n_annotated": len(data),
        "history": history,
    }


def associate_from_outputs(outputs, tracklets, annotated, config, method) -> Association:
    """Build an association from classifier outputs.

    The iterative method consumes the per-tracklet class probabilities; the
    factorization method consumes the tracklet feature vectors through the
    appearance/location similarity matrix. Tracklets the classifier puts in
    the reject class stay out of the factorization: bystanders come in all
    appearances, so their rows do not share one column's worth of mutual
    similarity and the fit would scatter them over player columns. They are
    reported as class 0. Annotated tracklets always enter, players as
    clamped one-hot rows and labelled rejects as reject-column anchors, so
    a bystander the classifier mistakes for a player is still drained if it
    resembles an annotated one. The class probabilities ride along so rows
    the factorization abstains on fall back to conflict-blocked classifier
    assignment instead of being thrown away.
    """
    probabilities = np.stack([o.probabilities() for o in outputs])
    if method == "iterative":
        return associate_iterative(probabilities, tracklets, annotated)
    features = np.stack([o.feature for o in outputs])
    keep = [i for i, t in enumerate(tracklets)
            if t.id in annotated or int(np.argmax(probabilities[i])) > 0]
    kept = [tracklets[i] for i in keep]
    similarity = build_similarity_matrix(kept, features[keep], config)
    annotated_rows = {j: annotated[t.id]
                      for j, t in enumerate(kept) if t.id in annotated}
    factor, _ = rnmf_factorize(similarity, config.n_players, annotated_rows,
                               iterations=config.rnmf_iterations,
                               seed=config.seed)
    association = associate_rnmf(factor, kept, annotated,
                                 config.min_assign_score,
                                 probabilities=probabilities[keep])
    kept_ids = {t.id for t in kept}
    for i, t in enumerate(tracklets):
        if t.id not in kept_ids:
            association.entries[t.id] = AssignedIdentity(
                t.id, 0, PROV_UNASSIGNED, float(probabilities[i, 0]))
    return association


def run_association(project: Project, method: str) -> dict:
    """Associate every tracklet using the latest checkpoint; persists and
    returns the association document."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    latest = project.latest_checkpoint()
    if latest is None:
        raise ProjectError("no trained checkpoint; train first")
    ckpt_path, digest, round_ = latest
    model = load_checkpoint(ckpt_path)
    tracklets = project.tracklets()
    if not tracklets:
        raise ProjectError("no tracklets to associate")
    outputs = classify_tracklets(model, tracklets, project.embeddings())
    annotated = effective_annotations(project.annotations())
    association = associate_from_outputs(outputs, tracklets, annotated,
                                         model.config, method)

    doc = association.to_doc()
    doc["checkpoint_hash"] = digest
    doc["round"] = round_
    doc["created"] = time.time()
    doc["class_scores"] = {str(t.id): outputs[i].probabilities().tolist()
                           for i, t in enumerate(tracklets)}
    project.save_association(doc)
    return doc


def tracklet_appearance(tracklets, embeddings, samples: int) -> np.ndarray:
    """Per-tracklet appearance vector: mean over the same resampled
    per-detection embeddings the classifier consumes. One row per tracklet."""
    return np.stack([
        gather_tracklet_features(t, embeddings, samples).mean(axis=0)
        for t in tracklets
    ])


def plan_annotation_wave(
    tracklets,
    records,
    n_players: int,
    already: Mapping[int, int] | set,
    per_player: int = 1,
    class0: int = 2,
    features: np.ndarray | None = None,
) -> list[tuple[int, int]]:
    """One wave of simulated-user labels, ground truth as the authority.

    Each player gets their longest not-yet-annotated tracklet(s). The
    reject labels model a user who tags each new-looking bystander once:
    with per-tracklet ``features`` (rows aligned with ``tracklets``),
    every pick is the candidate least similar to the rejects labelled so
    far, including those from earlier waves when ``already`` carries
    identities. Without features the longest candidates are taken.
    Returns (tracklet_id, identity) pairs.
    """
    from .simulate import dominant_gt_identity, team_identity

    pools: dict[int, list] = {i: [] for i in range(n_players + 1)}
    index_of = {t.id: i for i, t in enumerate(tracklets)}
    for t in tracklets:
        if t.id in already:
            continue
        label = team_identity(dominant_gt_identity(t, records), n_players)
        pools[label].append(t)
    pairs: list[tuple[int, int]] = []
    for identity in range(1, n_players + 1):
        ranked = sorted(pools[identity], key=lambda t: (-len(t), t.id))
        pairs += [(t.id, identity) for t in ranked[:per_player]]

    if features is None or not pools[0]:
        ranked0 = sorted(pools[0], key=lambda t: (-len(t), t.id))
        pairs += [(t.id, 0) for t in ranked0[:class0]]
        return pairs

    unit = np.asarray(features, dtype=float)
    norms = np.linalg.norm(unit, axis=1, keepdims=True)
    unit = unit / np.maximum(norms, 1e-12)
    covered: list[int] = []
    if isinstance(already, Mapping):
        covered = [index_of[tid] for tid, identity in already.items()
                   if identity == 0 and tid in index_of]
    candidates = sorted(pools[0], key=lambda t: (-len(t), t.id))
    for _ in range(min(class0, len(candidates))):
        if covered:
            anchor = unit[covered]
            best = min(candidates,
                       key=lambda t: (float(np.max(anchor @ unit[index_of[t.id]])),
                                      -len(t), t.id))
        else:
            best = candidates[0]
        pairs.append((best.id, 0))
        covered.append(index_of[best.id])
        candidates.remove(best)
    return pairs


def auto_annotate(project: Project, per_player: int = 1, class0: int = 2) -> list:
    """Simulated user: add one wave of ground-truth-derived labels to the
    project. Returns the annotations added."""
    if not project.has_ground_truth():
        raise ProjectError("auto-annotation needs ground truth")
    already = effective_annotations(project.annotations())
    tracklets = project.tracklets()
    features = tracklet_appearance(tracklets, project.embeddings(),
                                   project.config.samples_per_track)
    pairs = plan_annotation_wave(tracklets, project.ground_truth(),
                                 project.config.n_players, already,
                                 per_player, class0, features)
    return project.add_annotations(pairs)


def run_metrics(project: Project, association: Association | None = None) -> MetricsReport:
    """Score the latest (or a given) association against ground truth."""
    if not project.has_ground_truth():
        raise ProjectError("project has no ground truth")
    if association is None:
        association = project.latest_association_object()
    if association is None:
        raise ProjectError("no association computed yet")
    n = project.config.n_players
    gt = frame_objects_from_records(project.ground_truth(), keep_identities=team_range(n))
    hyp = frame_objects_from_association(project.tracklets(), association, n)
    return compute_metrics(gt, hyp)
