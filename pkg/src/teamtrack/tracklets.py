"""Non-ambiguous tracklet generation.

Tracking by detection: per frame, active tracks are advanced by a Kalman
filter, matched to detections by IoU with a Hungarian solver, and any two
tracks whose current boxes overlap above the split threshold are both
terminated so no tracklet ever contains two identities. Unmatched tracks
terminate immediately (no coasting), which keeps every tracklet
frame-consecutive and backed by real detections.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import kalman
from .assignment import FORBIDDEN, hungarian_assign
from .config import ProjectConfig
from .core import Detection, Tracklet, iou


@dataclass
class _ActiveTrack:
    state: kalman.TrackState
    detections: list[Detection]
    predicted: kalman.TrackState | None = None

    @property
    def last_frame(self) -> int:
        return self.detections[-1].frame


def _finalize(track: _ActiveTrack, done: list[list[Detection]], min_len: int) -> None:
    if len(track.detections) >= min_len:
        done.append(track.detections)


def generate_tracklets(detections: list[Detection], config: ProjectConfig) -> list[Tracklet]:
    """Group frame-sorted detections into non-ambiguous tracklets."""
    by_frame: dict[int, list[Detection]] = {}
    for det in detections:
        if det.confidence >= config.min_confidence:
            by_frame.setdefault(det.frame, []).append(det)

    active: list[_ActiveTrack] = []
    done: list[list[Detection]] = []

    for frame in sorted(by_frame):
        frame_dets = by_frame[frame]

        # tracks that skipped a frame terminate: no coasting
        still = []
        for tr in active:
            if tr.last_frame == frame - 1:
                still.append(tr)
            else:
                _finalize(tr, done, config.min_track_len)
        active = still

        for tr in active:
            tr.predicted = kalman.kalman_predict(tr.state)

        # IoU cost between predicted track boxes and detections
        if active and frame_dets:
            cost = np.full((len(active), len(frame_dets)), FORBIDDEN)
            for i, tr in enumerate(active):
                pbox = tr.predicted.box()
                for j, det in enumerate(frame_dets):
                    ov = iou(pbox, det.box)
                    if ov >= config.match_min_iou:
                        cost[i, j] = 1.0 - ov
            matches = hungarian_assign(cost)
        else:
            matches = []

        matched_tracks = {i for i, _ in matches}
        matched_dets = {j for _, j in matches}

        next_active: list[_ActiveTrack] = []
        for i, j in matches:
            tr = active[i]
            det = frame_dets[j]
            tr.state = kalman.kalman_update(tr.predicted, det.box)
            tr.detections.append(det)
            next_active.append(tr)

        for i, tr in enumerate(active):
            if i not in matched_tracks:
                _finalize(tr, done, config.min_track_len)

        for j, det in enumerate(frame_dets):
            if j not in matched_dets:
                next_active.append(
                    _ActiveTrack(kalman.initiate(det.box), [det])
                )

        # split rule: tracks whose detected boxes overlap above split_iou are
        # ambiguous; cut their history and restart them at this frame
        to_split = set()
        for a, b in itertools.combinations(range(len(next_active)), 2):
            ta, tb = next_active[a], next_active[b]
            if iou(ta.detections[-1].box, tb.detections[-1].box) >= config.split_iou:
                to_split.add(a)
                to_split.add(b)
        for idx in to_split:
            tr = next_active[idx]
            if len(tr.detections) < 2:
                continue  # already starts at this frame
            head, tail = tr.detections[:-1], tr.detections[-1]
            _finalize(_ActiveTrack(tr.state, head), done, config.min_track_len)
            next_active[idx] = _ActiveTrack(kalman.initiate(tail.box), [tail])

        active = next_active

    for tr in active:
        _finalize(tr, done, config.min_track_len)

    done.sort(key=lambda dets: (dets[0].frame, dets[-1].frame, dets[0].box.left, dets[0].box.top))
    return [Tracklet(i, tuple(dets)) for i, dets in enumerate(done)]


def mean_length(tracklets: list[Tracklet]) -> float:
    if not tracklets:
        return 0.0
    return sum(len(t) for t in tracklets) / len(tracklets)
