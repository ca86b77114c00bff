"""Project configuration with the published default constants."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path


@dataclass
class ProjectConfig:
    """Everything the pipeline needs to know about one tracking project.

    Defaults follow the reference setup: tracklets of at least 10 frames
    resampled to 10 images, a 2048 -> 128 feature projection, 32 learned
    queries of which the best 4 are optimized, 120 AdamW epochs at lr 9e-5,
    appearance/location similarity thresholds 0.35 / 0.43 and a 0.5 s
    linking window.
    """

    n_players: int
    fps: float = 50.0

    # detection ingestion
    min_confidence: float = 0.0

    # tracklet generation
    min_track_len: int = 10       # discard shorter tracklets
    split_iou: float = 0.5        # overlapping tracks above this are split
    match_min_iou: float = 0.3    # gate for detection-track matching

    # tracklet classifier
    samples_per_track: int = 10   # images resampled from each tracklet
    embedding_dim: int = 2048     # per-image appearance feature size
    model_dim: int = 128          # transformer width
    n_queries: int = 32           # learned decoder queries
    n_top_queries: int = 4        # queries kept for back-propagation
    encoder_layers: int = 16
    decoder_layers: int = 1
    attention_heads: int = 16

    # training
    epochs: int = 120
    learning_rate: float = 9e-5
    weight_decay: float = 1e-4
    batch_size: int = 4
    triplet_weight: int = 0       # 0 for iterative association, 1 for RNMF

    # association
    appearance_threshold: float = 0.35  # cosine distance above = distinct
    location_weight: float = 0.43
    max_gap_seconds: float = 0.5
    similarity_floor: float = 0.15      # weaker links are resemblance, not evidence
    min_assign_score: float = 0.02      # RNMF rows below this go to class 0
    rnmf_iterations: int = 500

    seed: int = 0

    def __post_init__(self):
        if self.n_players < 1:
            raise ValueError("n_players must be >= 1")
        if self.fps <= 0:
            raise ValueError("fps must be > 0")
        if self.model_dim % self.attention_heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} not divisible by "
                f"{self.attention_heads} heads"
            )
        if self.n_top_queries > self.n_queries:
            raise ValueError("n_top_queries cannot exceed n_queries")
        if self.triplet_weight not in (0, 1):
            raise ValueError("triplet_weight must be 0 or 1")
        if self.samples_per_track > self.min_track_len:
            raise ValueError("samples_per_track cannot exceed min_track_len")

    @property
    def n_classes(self) -> int:
        """Player classes plus the class-0 catch-all."""
        return self.n_players + 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ProjectConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ProjectConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))
