"""Domain types and deterministic geometry primitives.

Everything in this module is immutable after construction and safe to share
across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box given as (left, top, width, height)."""

    left: float
    top: float
    width: float
    height: float

    def __post_init__(self):
        for v in (self.left, self.top, self.width, self.height):
            if not math.isfinite(v):
                raise ValueError(f"non-finite box coordinate: {self!r}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"box width/height must be positive: {self!r}")

    @property
    def right(self) -> float:
        return self.left + self.width

    @property
    def bottom(self) -> float:
        return self.top + self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.left + self.width / 2.0, self.top + self.height / 2.0)

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_ltwh(self) -> tuple[float, float, float, float]:
        return (self.left, self.top, self.width, self.height)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes, in [0, 1]."""
    ix = min(a.right, b.right) - max(a.left, b.left)
    iy = min(a.bottom, b.bottom) - max(a.top, b.top)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class Detection:
    """One person box in one frame (0-based), pointing at its appearance
    embedding by row index."""

    frame: int
    box: BoundingBox
    confidence: float
    embedding_row: int

    def __post_init__(self):
        if self.frame < 0:
            raise ValueError(f"frame must be >= 0, got {self.frame}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class Tracklet:
    """Uninterrupted single-person sequence of detections.

    Frames are strictly consecutive: ``detections[k + 1].frame ==
    detections[k].frame + 1``.
    """

    id: int
    detections: tuple[Detection, ...]

    def __post_init__(self):
        if not self.detections:
            raise ValueError("tracklet needs at least one detection")
        frames = [d.frame for d in self.detections]
        for prev, cur in zip(frames, frames[1:]):
            if cur != prev + 1:
                raise ValueError(
                    f"tracklet {self.id}: frames not consecutive ({prev} -> {cur})"
                )

    def __len__(self) -> int:
        return len(self.detections)

    @property
    def start_frame(self) -> int:
        return self.detections[0].frame

    @property
    def end_frame(self) -> int:
        return self.detections[-1].frame

    def overlaps_in_time(self, other: "Tracklet") -> bool:
        return self.start_frame <= other.end_frame and other.start_frame <= self.end_frame


@dataclass(frozen=True)
class Annotation:
    """Human-assigned identity for one tracklet.

    Identity 0 is the catch-all class for persons that are not tracked
    (opponents, referees, public). The latest annotation for a tracklet wins.
    """

    tracklet_id: int
    identity: int
    round: int = 1

    def __post_init__(self):
        if self.identity < 0:
            raise ValueError(f"identity must be >= 0, got {self.identity}")
        if self.round < 0:
            raise ValueError(f"round must be >= 0, got {self.round}")


def effective_annotations(annotations: list[Annotation]) -> dict[int, int]:
    """Collapse an append-only annotation log to the effective identity per
    tracklet (latest wins)."""
    out: dict[int, int] = {}
    for ann in annotations:
        out[ann.tracklet_id] = ann.identity
    return out


class EmbeddingMatrix:
    """Row-major matrix of per-detection appearance vectors (float32)."""

    def __init__(self, data: np.ndarray):
        data = np.ascontiguousarray(data, dtype=np.float32)
        if data.ndim != 2:
            raise ValueError(f"embeddings must be 2-D, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("embeddings contain non-finite values")
        self.data = data

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.data[i]


def resample_indices(length: int, n_samples: int) -> list[int]:
    """Regularly sample ``n_samples`` indices from ``range(length)``.

    First index is 0, last is ``length - 1``, spacing is as even as rounding
    allows. Used to reduce a variable-length tracklet to a fixed number of
    frames.
    """
    if n_samples < 2:
        raise ValueError(f"need at least 2 samples, got {n_samples}")
    if length < n_samples:
        raise ValueError(f"cannot sample {n_samples} indices from length {length}")
    step = (length - 1) / (n_samples - 1)
    return [int(math.floor(i * step + 0.5)) for i in range(n_samples)]


def gather_tracklet_features(
    tracklet: Tracklet, embeddings: EmbeddingMatrix, n_samples: int
) -> np.ndarray:
    """Stack the embedding rows of ``n_samples`` regularly sampled detections
    into an (n_samples, dim) float64 matrix."""
    idx = resample_indices(len(tracklet), n_samples)
    rows = [embeddings.row(tracklet.detections[i].embedding_row) for i in idx]
    return np.stack(rows).astype(np.float64)
