"""Deterministic synthetic game generator.

Stands in for real footage at desk scale: two teams plus a few distractors
move between random waypoints on a pixel field, occasionally leaving and
re-entering; detections are the true boxes with jitter, minus occlusion
and random drops; appearance embeddings are identity-anchored points on
the unit sphere. Output uses the same file formats as real ingests, plus
exhaustive ground truth.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ProjectConfig
from .core import BoundingBox, Detection, Tracklet, iou
from .io import save_detections, save_embeddings, save_ground_truth


@dataclass
class SimConfig:
    """Knobs for one synthetic game.

    Identity embedding clusters sit at unit anchor vectors: teammates
    share a kit component (anchor cosine ``kit_similarity``) while
    opposite teams and untracked extras stay mutually orthogonal;
    ``embedding_noise`` is the typical norm of the random offset added per
    detection, and ``appearance_drift`` the norm of an offset that is
    fixed while an agent stays on the field but redrawn on every entry,
    the way pose, lighting and viewpoint shift a person's appearance
    between their appearances in real footage. Both are relative to the
    unit anchor, so same-person detections within one stay have cosine
    about 1/(1 + noise^2) and across stays about
    1/(1 + noise^2 + drift^2), the familiar shape of person re-id
    embeddings. The per-detection norm is drawn lognormal with sigma
    ``noise_spread``: most crops are clean, a heavy tail of blurred or
    clipped ones lands far from the cluster, so pairwise similarity is
    confident for many same-person pairs rather than uniformly mediocre
    for all of them. The per-stay drift norm is likewise lognormal with
    sigma ``drift_spread``: most re-entries stay recognizable while the
    odd one comes back heavily changed, and because that change is shared
    by every detection of the stay it cannot be averaged away. ``occlusion_iou`` above 1 disables occlusion
    handling; ``lanes`` confines every agent to its own horizontal band,
    which rules out box overlap between identities entirely.
    """

    n_players: int = 7           # per team; identities 1..n_players are tracked
    n_distractors: int = 3
    frames: int = 1500
    fps: float = 50.0
    field_width: int = 1920
    field_height: int = 1080
    speed_min: float = 60.0      # pixels per second
    speed_max: float = 240.0
    box_width_min: float = 36.0
    box_width_max: float = 54.0
    box_height_min: float = 85.0
    box_height_max: float = 115.0
    occlusion_iou: float = 0.5   # at or above, the farther box is hidden
    exit_rate: float = 0.0012    # per-frame chance of leaving the field
    off_seconds_min: float = 1.0
    off_seconds_max: float = 4.0
    min_stay_frames: int = 120   # no exit sooner after entering
    drop_probability: float = 0.005
    jitter_sigma: float = 1.0
    confidence_noise: float = 0.02
    embedding_dim: int = 2048
    embedding_noise: float = 0.5
    noise_spread: float = 0.9    # lognormal sigma of the per-detection norm
    appearance_drift: float = 0.8
    drift_spread: float = 0.0    # lognormal sigma of the per-stay drift norm
    kit_similarity: float = 0.55  # cosine between teammate anchors
    lanes: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_players < 1 or self.frames < 1:
            raise ValueError("need at least one player and one frame")
        if self.embedding_dim < 2 * self.n_players + self.n_distractors + 2:
            raise ValueError("embedding dimension too small for distinct identity anchors")
        if not 0.0 <= self.kit_similarity < 1.0:
            raise ValueError("kit_similarity must be in [0, 1)")
        if self.drift_spread < 0.0 or self.noise_spread < 0.0:
            raise ValueError("spread sigmas must be nonnegative")

    @property
    def n_agents(self) -> int:
        return 2 * self.n_players + self.n_distractors

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        return cls(**data)


@dataclass
class SimResult:
    out_dir: Path
    n_detections: int
    n_ground_truth: int
    n_agents: int
    detections_path: Path
    embeddings_path: Path
    ground_truth_path: Path


class _Agent:
    def __init__(self, identity: int, rng: np.random.Generator, cfg: SimConfig,
                 lane: tuple[float, float] | None):
        self.identity = identity
        self.lane = lane
        self.width = rng.uniform(cfg.box_width_min, cfg.box_width_max)
        self.height = rng.uniform(cfg.box_height_min, cfg.box_height_max)
        if lane is not None:
            usable = (lane[1] - lane[0]) * 0.8
            if self.height > usable:
                self.height = usable
            if self.width > usable:
                self.width = usable
        self.pos = self._random_point(rng, cfg)
        self.waypoint = self._random_point(rng, cfg)
        self.speed = rng.uniform(cfg.speed_min, cfg.speed_max)
        self.off_until = -1
        self.entered_at = 0
        self.drift = self._appearance_offset(rng, cfg)

    @staticmethod
    def _appearance_offset(rng: np.random.Generator, cfg: SimConfig) -> np.ndarray:
        direction = rng.standard_normal(cfg.embedding_dim)
        norm = cfg.appearance_drift * rng.lognormal(0.0, cfg.drift_spread)
        return norm * direction / np.linalg.norm(direction)

    def _bounds(self, cfg: SimConfig) -> tuple[float, float, float, float]:
        x_lo, x_hi = self.width / 2, cfg.field_width - self.width / 2
        if self.lane is not None:
            y_lo = self.lane[0] + self.height / 2
            y_hi = self.lane[1] - self.height / 2
        else:
            y_lo, y_hi = self.height / 2, cfg.field_height - self.height / 2
        return x_lo, x_hi, y_lo, y_hi

    def _random_point(self, rng: np.random.Generator, cfg: SimConfig) -> np.ndarray:
        x_lo, x_hi, y_lo, y_hi = self._bounds(cfg)
        return np.array([rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi)])

    def on_field(self, frame: int) -> bool:
        return frame >= self.off_until

    def step(self, frame: int, rng: np.random.Generator, cfg: SimConfig) -> None:
        if not self.on_field(frame):
            return
        if self.off_until >= 0 and frame == self.off_until:
            # re-enter near a side edge with a fresh heading
            self.pos = self._random_point(rng, cfg)
            x_lo, x_hi, _, _ = self._bounds(cfg)
            self.pos[0] = x_lo if rng.random() < 0.5 else x_hi
            self.waypoint = self._random_point(rng, cfg)
            self.speed = rng.uniform(cfg.speed_min, cfg.speed_max)
            self.off_until = -1
            self.entered_at = frame
            self.drift = self._appearance_offset(rng, cfg)
        if (cfg.exit_rate > 0.0
                and frame - self.entered_at >= cfg.min_stay_frames
                and rng.random() < cfg.exit_rate):
            off = rng.uniform(cfg.off_seconds_min, cfg.off_seconds_max)
            self.off_until = frame + max(1, round(off * cfg.fps))
            return
        delta = self.waypoint - self.pos
        dist = float(np.hypot(*delta))
        step = self.speed / cfg.fps
        if dist <= step:
            self.pos = self.waypoint.copy()
            self.waypoint = self._random_point(rng, cfg)
            self.speed = rng.uniform(cfg.speed_min, cfg.speed_max)
        else:
            self.pos = self.pos + delta * (step / dist)

    def box(self) -> BoundingBox:
        return BoundingBox(self.pos[0] - self.width / 2, self.pos[1] - self.height / 2,
                           self.width, self.height)


def _orthonormal(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """Mutually orthogonal unit vectors, deterministic per generator."""
    raw = rng.standard_normal((dim, n))
    q, r = np.linalg.qr(raw)
    return (q * np.sign(np.diag(r))).T


def _identity_anchors(rng: np.random.Generator, cfg: SimConfig) -> np.ndarray:
    """Anchor vector per agent: kit plus person.

    Players of one team share a kit component, so teammate anchors have
    cosine ``kit_similarity`` while players of opposite teams and the
    untracked extras (referees, stray spectators) stay mutually
    orthogonal. Telling teammates apart is then a fine-grained problem
    that rides on the residual personal component, which is what makes
    team sports harder than generic person re-identification.
    """
    basis = _orthonormal(rng, 2 + cfg.n_agents, cfg.embedding_dim)
    kits, persons = basis[:2], basis[2:]
    rho = cfg.kit_similarity
    anchors = np.empty_like(persons)
    for i in range(cfg.n_agents):
        if i < 2 * cfg.n_players:
            kit = kits[i // cfg.n_players]
            anchors[i] = np.sqrt(rho) * kit + np.sqrt(1.0 - rho) * persons[i]
        else:
            anchors[i] = persons[i]
    return anchors


def _jitter_box(box: BoundingBox, rng: np.random.Generator, cfg: SimConfig,
                lane: tuple[float, float] | None) -> BoundingBox:
    sigma = cfg.jitter_sigma
    left = box.left + rng.normal(0.0, sigma)
    top = box.top + rng.normal(0.0, sigma)
    w = max(4.0, box.width + rng.normal(0.0, sigma / 2))
    h = max(4.0, box.height + rng.normal(0.0, sigma / 2))
    y_lo, y_hi = (0.0, float(cfg.field_height)) if lane is None else lane
    left = min(max(left, 0.0), cfg.field_width - w)
    top = min(max(top, y_lo), y_hi - h)
    return BoundingBox(left, top, w, h)


def simulate(cfg: SimConfig, out_dir: str | Path) -> SimResult:
    """Generate one game into a project directory.

    Writes detections.csv, embeddings.bin, gt.csv and config.json; byte
    identical for identical configs. The farther (smaller bottom edge) of
    two boxes overlapping at the occlusion threshold loses its detection.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    anchors = _identity_anchors(rng, cfg)

    lane_height = cfg.field_height / cfg.n_agents
    agents = []
    for i in range(cfg.n_agents):
        lane = None
        if cfg.lanes:
            lane = (i * lane_height, (i + 1) * lane_height)
        agents.append(_Agent(i + 1, rng, cfg, lane))

    detections: list[Detection] = []
    embeddings: list[np.ndarray] = []
    gt_rows: list[tuple[int, int, BoundingBox]] = []

    for frame in range(cfg.frames):
        for agent in agents:
            agent.step(frame, rng, cfg)
        visible = [a for a in agents if a.on_field(frame)]
        boxes = {a.identity: a.box() for a in visible}
        for identity in sorted(boxes):
            gt_rows.append((frame, identity, boxes[identity]))

        occluded: set[int] = set()
        ordered = sorted(visible, key=lambda a: a.identity)
        for i, a in enumerate(ordered):
            for b in ordered[i + 1:]:
                if iou(boxes[a.identity], boxes[b.identity]) >= cfg.occlusion_iou:
                    farther = a if boxes[a.identity].bottom < boxes[b.identity].bottom else b
                    occluded.add(farther.identity)

        for agent in ordered:
            if agent.identity in occluded:
                continue
            if cfg.drop_probability > 0.0 and rng.random() < cfg.drop_probability:
                continue
            box = _jitter_box(boxes[agent.identity], rng, cfg, agent.lane)
            confidence = float(np.clip(0.9 + rng.normal(0.0, cfg.confidence_noise), 0.5, 1.0))
            noise = rng.standard_normal(cfg.embedding_dim)
            scale = cfg.embedding_noise * rng.lognormal(0.0, cfg.noise_spread)
            noise *= scale / np.linalg.norm(noise)
            vector = anchors[agent.identity - 1] + agent.drift + noise
            embeddings.append(vector / np.linalg.norm(vector))
            detections.append(Detection(frame, box, confidence, len(embeddings) - 1))

    det_path = out / "detections.csv"
    emb_path = out / "embeddings.bin"
    gt_path = out / "gt.csv"
    save_detections(det_path, detections)
    save_embeddings(emb_path, np.array(embeddings, dtype=np.float32)
                    if embeddings else np.zeros((0, cfg.embedding_dim), dtype=np.float32))
    save_ground_truth(gt_path, gt_rows)
    project = ProjectConfig(n_players=cfg.n_players, fps=cfg.fps,
                            embedding_dim=cfg.embedding_dim, seed=cfg.seed)
    project.save(out / "config.json")
    (out / "sim.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    return SimResult(out, len(detections), len(gt_rows), cfg.n_agents,
                     det_path, emb_path, gt_path)


# -- oracles for tests and the simulated user -----------------------------------


def ground_truth_segments(
    records: list[tuple[int, int, BoundingBox]],
    min_length: int = 1,
) -> list[tuple[int, int, int]]:
    """Maximal runs of consecutive frames per identity, as (identity,
    start_frame, end_frame), filtered to runs of at least min_length."""
    frames_by_id: dict[int, list[int]] = {}
    for frame, identity, _ in records:
        frames_by_id.setdefault(identity, []).append(frame)
    segments = []
    for identity, frames in frames_by_id.items():
        frames.sort()
        start = prev = frames[0]
        for f in frames[1:]:
            if f != prev + 1:
                segments.append((identity, start, prev))
                start = f
            prev = f
        segments.append((identity, start, prev))
    return sorted(s for s in segments if s[2] - s[1] + 1 >= min_length)


def dominant_gt_identity(
    tracklet: Tracklet,
    records: list[tuple[int, int, BoundingBox]],
    min_iou: float = 0.5,
) -> int | None:
    """The ground-truth identity behind a tracklet, by per-frame best-box
    vote; None when no detection overlaps any gt box enough."""
    by_frame: dict[int, list[tuple[int, BoundingBox]]] = {}
    for frame, identity, box in records:
        by_frame.setdefault(frame, []).append((identity, box))
    votes: dict[int, int] = {}
    for det in tracklet.detections:
        best_id, best = None, min_iou
        for identity, box in by_frame.get(det.frame, ()):
            overlap = iou(det.box, box)
            if overlap >= best:
                best_id, best = identity, overlap
        if best_id is not None:
            votes[best_id] = votes.get(best_id, 0) + 1
    if not votes:
        return None
    return max(sorted(votes), key=lambda k: votes[k])


def team_identity(gt_identity: int | None, n_players: int) -> int:
    """Map a raw ground-truth identity to the classifier's label space:
    tracked players keep their id, everyone else is class 0."""
    if gt_identity is None or not 1 <= gt_identity <= n_players:
        return 0
    return gt_identity
