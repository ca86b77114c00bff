"""Multi-object-tracking quality metrics.

Hypothesis tracks are compared against ground truth with the standard
frame-by-frame protocol: matches from the previous frame persist while the
boxes still overlap enough, new correspondences are made by maximum-overlap
assignment, and everything left over counts as a false positive or miss.
On top of the frame matching sit the accuracy score and identity-switch
count; the identity F1 instead matches whole trajectories globally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .assignment import FORBIDDEN, hungarian_assign
from .association import Association
from .core import BoundingBox, Tracklet, iou

IOU_GATE = 0.5

# frame -> list of (identity, box); hypothesis lists may repeat an identity
# within a frame (conflicting assignments are scored, not hidden)
FrameObjects = dict[int, list[tuple[int, BoundingBox]]]


def frame_objects_from_records(
    records: Iterable[tuple[int, int, BoundingBox]],
    keep_identities: range | None = None,
) -> FrameObjects:
    """Group (frame, identity, box) rows by frame, optionally filtering to
    an identity range (the tracked team)."""
    out: FrameObjects = {}
    for frame, identity, box in records:
        if keep_identities is not None and identity not in keep_identities:
            continue
        out.setdefault(frame, []).append((identity, box))
    return out


def frame_objects_from_association(
    tracklets: Sequence[Tracklet],
    association: Association,
    n_players: int,
) -> FrameObjects:
    """Hypothesis boxes from assigned tracklets; class 0 is not scored."""
    out: FrameObjects = {}
    for t in tracklets:
        identity = association.identity_of(t.id)
        if not 1 <= identity <= n_players:
            continue
        for det in t.detections:
            out.setdefault(det.frame, []).append((identity, det.box))
    return out


def team_range(n_players: int) -> range:
    return range(1, n_players + 1)


@dataclass
class FrameMatching:
    """Per-frame gt-to-hypothesis correspondence plus the error counts."""

    matches: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    fp: int = 0
    fn: int = 0
    gt_total: int = 0


def _persist_matches(
    prev: Mapping[int, int],
    gt_list: list[tuple[int, BoundingBox]],
    hyp_list: list[tuple[int, BoundingBox]],
    used_hyp: set[int],
) -> list[tuple[int, int, int]]:
    """Carry over previous-frame pairs that still overlap; returns
    (gt_pos, hyp_pos, gt_id) triples."""
    gt_by_id = {identity: pos for pos, (identity, _) in enumerate(gt_list)}
    carried = []
    for gt_id in sorted(prev):
        if gt_id not in gt_by_id:
            continue
        hyp_id = prev[gt_id]
        gt_pos = gt_by_id[gt_id]
        best_pos, best_iou = -1, 0.0
        for pos, (identity, box) in enumerate(hyp_list):
            if identity != hyp_id or pos in used_hyp:
                continue
            overlap = iou(gt_list[gt_pos][1], box)
            if overlap >= IOU_GATE and overlap > best_iou:
                best_pos, best_iou = pos, overlap
        if best_pos >= 0:
            used_hyp.add(best_pos)
            carried.append((gt_pos, best_pos, gt_id))
    return carried


def match_frames(gt: FrameObjects, hyp: FrameObjects) -> FrameMatching:
    """Frame-by-frame one-to-one matching at the overlap gate.

    Ground truth must have unique identities within a frame. Pairs matched
    in the previous frame persist while their boxes still clear the gate;
    the rest is matched fresh by maximum total overlap.
    """
    result = FrameMatching()
    prev: dict[int, int] = {}
    for frame in sorted(set(gt) | set(hyp)):
        gt_list = gt.get(frame, [])
        hyp_list = hyp.get(frame, [])
        ids = [identity for identity, _ in gt_list]
        if len(ids) != len(set(ids)):
            raise ValueError(f"duplicate ground-truth identity in frame {frame}")

        used_hyp: set[int] = set()
        carried = _persist_matches(prev, gt_list, hyp_list, used_hyp)
        matched_gt = {gt_pos for gt_pos, _, _ in carried}

        free_gt = [pos for pos in range(len(gt_list)) if pos not in matched_gt]
        free_hyp = [pos for pos in range(len(hyp_list)) if pos not in used_hyp]
        cost = np.full((len(free_gt), len(free_hyp)), FORBIDDEN)
        for i, gpos in enumerate(free_gt):
            for j, hpos in enumerate(free_hyp):
                overlap = iou(gt_list[gpos][1], hyp_list[hpos][1])
                if overlap >= IOU_GATE:
                    cost[i, j] = -overlap
        fresh = [(free_gt[i], free_hyp[j]) for i, j in hungarian_assign(cost)]

        pairs = [(gt_id, hyp_list[hpos][0]) for _, hpos, gt_id in carried]
        pairs += [(gt_list[gpos][0], hyp_list[hpos][0]) for gpos, hpos in fresh]
        pairs.sort()
        result.matches[frame] = pairs
        matched = len(pairs)
        result.fp += len(hyp_list) - matched
        result.fn += len(gt_list) - matched
        result.gt_total += len(gt_list)
        prev = dict(pairs)
    return result


def idsw(matching: FrameMatching) -> int:
    """Frames where a ground-truth identity's hypothesis id differs from
    the one it was last matched to (gaps included)."""
    last: dict[int, int] = {}
    switches = 0
    for frame in sorted(matching.matches):
        for gt_id, hyp_id in matching.matches[frame]:
            if gt_id in last and last[gt_id] != hyp_id:
                switches += 1
            last[gt_id] = hyp_id
    return switches


def mota(matching: FrameMatching) -> float:
    """1 - (misses + false positives + identity switches) / gt boxes.

    Can be negative; undefined without ground truth."""
    if matching.gt_total == 0:
        raise ValueError("no ground-truth boxes, accuracy undefined")
    errors = matching.fn + matching.fp + idsw(matching)
    return 1.0 - errors / matching.gt_total


def _tracks_by_identity(objs: FrameObjects) -> dict[int, dict[int, list[BoundingBox]]]:
    tracks: dict[int, dict[int, list[BoundingBox]]] = {}
    for frame, entries in objs.items():
        for identity, box in entries:
            tracks.setdefault(identity, {}).setdefault(frame, []).append(box)
    return tracks


def idf1_counts(gt: FrameObjects, hyp: FrameObjects) -> tuple[int, int, int]:
    """(IDTP, IDFP, IDFN) from a global identity-to-identity matching.

    Each (gt identity, hyp identity) pair is scored by the number of frames
    where they co-occur with box overlap at the gate; the assignment
    maximizing the total determines the true-positive count.
    """
    gt_tracks = _tracks_by_identity(gt)
    hyp_tracks = _tracks_by_identity(hyp)
    gt_ids = sorted(gt_tracks)
    hyp_ids = sorted(hyp_tracks)
    total_gt = sum(len(v) for v in gt.values())
    total_hyp = sum(len(v) for v in hyp.values())

    overlap = np.zeros((len(gt_ids), len(hyp_ids)))
    for i, gid in enumerate(gt_ids):
        for j, hid in enumerate(hyp_ids):
            count = 0
            hyp_frames = hyp_tracks[hid]
            for frame, boxes in gt_tracks[gid].items():
                if frame not in hyp_frames:
                    continue
                if any(iou(g, h) >= IOU_GATE for g in boxes for h in hyp_frames[frame]):
                    count += 1
            overlap[i, j] = count

    idtp = 0
    if overlap.size:
        pairs = hungarian_assign(-overlap)
        idtp = int(sum(overlap[i, j] for i, j in pairs))
    return idtp, total_hyp - idtp, total_gt - idtp


def idf1(gt: FrameObjects, hyp: FrameObjects) -> float:
    idtp, idfp, idfn = idf1_counts(gt, hyp)
    denom = 2 * idtp + idfp + idfn
    if denom == 0:
        return 1.0
    return 2 * idtp / denom


@dataclass
class MetricsReport:
    idf1: float
    mota: float
    idsw: int
    idtp: int
    idfp: int
    idfn: int
    fp: int
    fn: int
    gt: int

    def to_dict(self) -> dict:
        return {
            "idf1": self.idf1,
            "mota": self.mota,
            "idsw": self.idsw,
            "idtp": self.idtp,
            "idfp": self.idfp,
            "idfn": self.idfn,
            "fp": self.fp,
            "fn": self.fn,
            "gt": self.gt,
        }

    def text_table(self) -> str:
        header = f"{'IDF1':>8} {'IDs':>6} {'MOTA':>8} {'FP':>6} {'FN':>6} {'GT':>8}"
        row = (f"{self.idf1:>8.3f} {self.idsw:>6d} {self.mota:>8.3f} "
               f"{self.fp:>6d} {self.fn:>6d} {self.gt:>8d}")
        return header + "\n" + row


def compute_metrics(gt: FrameObjects, hyp: FrameObjects) -> MetricsReport:
    """Full report over pre-filtered frame objects."""
    matching = match_frames(gt, hyp)
    idtp, idfp, idfn = idf1_counts(gt, hyp)
    denom = 2 * idtp + idfp + idfn
    return MetricsReport(
        idf1=2 * idtp / denom if denom else 1.0,
        mota=mota(matching),
        idsw=idsw(matching),
        idtp=idtp,
        idfp=idfp,
        idfn=idfn,
        fp=matching.fp,
        fn=matching.fn,
        gt=matching.gt_total,
    )
