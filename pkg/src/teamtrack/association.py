"""Identity association: map every tracklet to a player identity.

Two algorithms share the classifier outputs. The greedy iterative one
repeatedly takes the globally highest class probability among unassigned
tracklets, skipping identities already occupied during the tracklet's
frames. The factorization one builds a symmetric tracklet-to-tracklet
similarity matrix (appearance + location terms) and finds a low-rank
nonnegative factor whose rows vote for identities, with annotated rows
clamped so human labels stay binding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .config import ProjectConfig
from .core import BoundingBox, Tracklet, iou

PROV_ANNOTATED = "annotated"
PROV_ITERATIVE = "iterative"
PROV_RNMF = "rnmf"
PROV_FALLBACK = "classifier-fallback"
PROV_UNASSIGNED = "unassigned-to-0"


@dataclass(frozen=True)
class AssignedIdentity:
    tracklet_id: int
    identity: int
    provenance: str
    score: float


@dataclass
class Association:
    """Identity per tracklet, with how each decision was made."""

    method: str
    entries: dict[int, AssignedIdentity]

    def identity_of(self, tracklet_id: int) -> int:
        return self.entries[tracklet_id].identity

    def to_doc(self) -> dict:
        return {
            "method": self.method,
            "entries": [
                {
                    "tracklet_id": e.tracklet_id,
                    "identity": e.identity,
                    "provenance": e.provenance,
                    "score": e.score,
                }
                for e in sorted(self.entries.values(), key=lambda e: e.tracklet_id)
            ],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Association":
        entries = {
            e["tracklet_id"]: AssignedIdentity(
                e["tracklet_id"], e["identity"], e["provenance"], e["score"])
            for e in doc["entries"]
        }
        return cls(doc["method"], entries)


# -- similarity terms ----------------------------------------------------------


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero-norm feature vector")
    return 1.0 - float(np.dot(a, b)) / (na * nb)


def appearance_similarity(f_u: np.ndarray, f_v: np.ndarray, threshold: float) -> float:
    """1 at identical features, 0 at cosine distance = threshold, negative
    beyond (clipped by the matrix builder)."""
    return 1.0 - cosine_distance(f_u, f_v) / threshold


def location_similarity(
    last_box_u: BoundingBox,
    first_box_v: BoundingBox,
    gap_frames: int,
    fps: float,
    weight: float,
    max_gap_seconds: float,
) -> float:
    """Similarity of two successive tracklets from box continuity.

    The gap is the frame distance from the end of the earlier tracklet to
    the start of the later one, converted to seconds. Beyond the maximum
    gap the term is 0; within it, (1+weight)*IoU - weight, so boxes need
    IoU > weight/(1+weight) to contribute after clipping.
    """
    if gap_frames <= 0:
        raise ValueError("tracklets must be successive")
    if gap_frames / fps > max_gap_seconds:
        return 0.0
    return (1.0 + weight) * iou(last_box_u, first_box_v) - weight


def _clip01(x: float) -> float:
    return max(min(x, 1.0), 0.0)


SELF_SIMILARITY = 2.0


def build_similarity_matrix(
    tracklets: Sequence[Tracklet],
    features: np.ndarray,
    config: ProjectConfig,
) -> np.ndarray:
    """Symmetric matrix of clipped appearance + location similarity.

    ``features`` holds one row per tracklet, in order. Entries lie in
    [0, 2]; the diagonal is a fixed self-similarity constant and carries no
    information. Temporally overlapping pairs get appearance only.

    Entries below ``config.similarity_floor`` are zeroed. A barely-above-cut
    appearance match means looks-vaguely-alike, and the factorization sums
    links, so a fan of such matches from one outsider onto one player's
    tracklets would add up to a confident wrong vote. The floor keeps weak
    resemblance from aggregating while leaving direct evidence (same person
    seen again, or a box hand-over at a junction) untouched.
    """
    n = len(tracklets)
    if features.shape[0] != n:
        raise ValueError("one feature row per tracklet required")
    s = np.zeros((n, n))
    np.fill_diagonal(s, SELF_SIMILARITY)
    for ui in range(n):
        for vi in range(ui + 1, n):
            a, b = tracklets[ui], tracklets[vi]
            value = _clip01(appearance_similarity(features[ui], features[vi],
                                                  config.appearance_threshold))
            if not a.overlaps_in_time(b):
                first, second = (a, b) if a.end_frame < b.start_frame else (b, a)
                value += _clip01(location_similarity(
                    first.detections[-1].box,
                    second.detections[0].box,
                    second.start_frame - first.end_frame,
                    config.fps,
                    config.location_weight,
                    config.max_gap_seconds,
                ))
            if value < config.similarity_floor:
                value = 0.0
            s[ui, vi] = s[vi, ui] = value
    return s


def similarity_csv(matrix: np.ndarray, tracklets: Sequence[Tracklet]) -> str:
    """Debug export: header row/column of tracklet ids, then the entries."""
    ids = [str(t.id) for t in tracklets]
    lines = ["," + ",".join(ids)]
    for tid, row in zip(ids, matrix):
        lines.append(tid + "," + ",".join(f"{x:.6f}" for x in row))
    return "\n".join(lines) + "\n"


# -- greedy iterative assignment ------------------------------------------------


def associate_iterative(
    probabilities: np.ndarray,
    tracklets: Sequence[Tracklet],
    annotated: Mapping[int, int],
) -> Association:
    """Assign identities by repeatedly taking the globally best class
    probability.

    ``probabilities`` is (n_tracklets, n_classes), one softmax row per
    tracklet in tracklet order. Column 0 is the not-tracked class and may
    hold any number of tracklets; a positive identity is blocked for a
    tracklet while another tracklet assigned to it overlaps it in time.
    Blocked pairs are retried never; a tracklet with every pair blocked
    falls back to class 0. Annotated tracklets are fixed beforehand and
    occupy their identity's timeline.
    """
    n, _ = probabilities.shape
    if n != len(tracklets):
        raise ValueError("one probability row per tracklet required")

    entries: dict[int, AssignedIdentity] = {}
    occupied: dict[int, list[Tracklet]] = {}

    for t in tracklets:
        if t.id in annotated:
            identity = annotated[t.id]
            entries[t.id] = AssignedIdentity(t.id, identity, PROV_ANNOTATED, 1.0)
            _occupy(occupied, identity, t)

    pending = [i for i, t in enumerate(tracklets) if t.id not in entries]
    _assign_by_score(probabilities.astype(float), tracklets, pending,
                     occupied, PROV_ITERATIVE, entries)
    return Association("iterative", entries)


def _occupy(occupied: dict[int, list[Tracklet]], identity: int,
            tracklet: Tracklet) -> None:
    if identity > 0:
        occupied.setdefault(identity, []).append(tracklet)


def _assign_by_score(
    scores: np.ndarray,
    tracklets: Sequence[Tracklet],
    pending: list[int],
    occupied: dict[int, list[Tracklet]],
    provenance: str,
    entries: dict[int, AssignedIdentity],
) -> None:
    """Greedy best-score-first assignment with temporal blocking.

    Takes ``pending`` row indices into ``scores``; mutates ``entries`` and
    ``occupied``. Identity 0 never blocks; a row with every positive
    identity blocked falls to class 0 as unassigned.
    """
    n_classes = scores.shape[1]
    blocked = np.zeros_like(scores, dtype=bool)

    def conflicts(identity: int, tracklet: Tracklet) -> bool:
        return any(tracklet.overlaps_in_time(o) for o in occupied.get(identity, ()))

    while pending:
        for i in list(pending):
            if blocked[i].all():
                t = tracklets[i]
                entries[t.id] = AssignedIdentity(t.id, 0, PROV_UNASSIGNED, 0.0)
                pending.remove(i)
        if not pending:
            break
        masked = np.where(blocked[pending], -np.inf, scores[pending])
        flat = int(np.argmax(masked))
        row, identity = divmod(flat, n_classes)
        idx = pending[row]
        t = tracklets[idx]
        if identity > 0 and conflicts(identity, t):
            blocked[idx, identity] = True
            continue
        entries[t.id] = AssignedIdentity(
            t.id, identity, provenance, float(scores[idx, identity]))
        _occupy(occupied, identity, t)
        pending.remove(idx)


# -- restricted nonnegative factorization ----------------------------------------


RNMF_EPS = 1e-12
RNMF_TOL = 1e-9


def _clamp_rows(a: np.ndarray, clamped: Mapping[int, int]) -> None:
    for row, identity in clamped.items():
        a[row] = 0.0
        a[row, identity] = 1.0


def rnmf_factorize(
    similarity: np.ndarray,
    n_players: int,
    annotated_rows: Mapping[int, int],
    iterations: int = 500,
    seed: int = 0,
    tol: float = RNMF_TOL,
    init: np.ndarray | None = None,
) -> tuple[np.ndarray, list[float]]:
    """Factorize the similarity matrix as A @ A.T with A >= 0 and
    n_players + 1 columns, where column k is identity k.

    Multiplicative updates with a square-root exponent keep the Frobenius
    objective non-increasing. ``annotated_rows`` maps row index to
    identity; those rows are reset after every update to one-hot, which is
    what makes the factorization restricted. Column 0 is the reject pool:
    rows labelled 0 anchor it, so unlabelled rows that look like the
    labelled rejects drain their mass there instead of contaminating a
    player column. Without any 0-labelled row the column starts at zero
    and multiplicative updates keep it zero. Returns (A, objective
    history). Stops early once the objective improves by less than
    ``tol``.

    ``init`` replaces the uniform random start with a caller-chosen
    nonnegative (n, n_players + 1) matrix. Multiplicative updates only
    rescale, so the start picks which local minimum the fit lands in;
    seeding it with per-row identity beliefs keeps large blocks of
    mutually similar rows from capturing a column they do not own. Exact
    zeros in ``init`` stay zero for the same reason.

    The diagonal is a display convention, not data, so the fit zeroes it;
    a row with no off-diagonal support then decays below any assignment
    floor instead of being forced to unit norm by its own self-similarity.
    """
    s = np.array(similarity, dtype=float)
    np.fill_diagonal(s, 0.0)
    n = s.shape[0]
    if s.shape != (n, n):
        raise ValueError("similarity matrix must be square")
    if init is None:
        rng = np.random.default_rng(seed)
        a = rng.uniform(0.0, 1.0, size=(n, n_players + 1))
        if 0 not in annotated_rows.values():
            a[:, 0] = 0.0
    else:
        a = np.array(init, dtype=float)
        if a.shape != (n, n_players + 1):
            raise ValueError("init must be (n, n_players + 1)")
        if np.any(a < 0.0):
            raise ValueError("init must be nonnegative")
    _clamp_rows(a, annotated_rows)

    def objective(m: np.ndarray) -> float:
        diff = s - m @ m.T
        return float(np.sum(diff * diff))

    history = [objective(a)]
    for _ in range(iterations):
        numer = s @ a
        denom = a @ (a.T @ a) + RNMF_EPS
        a = a * np.sqrt(np.maximum(numer, 0.0) / denom)
        _clamp_rows(a, annotated_rows)
        history.append(objective(a))
        if history[-2] - history[-1] < tol:
            break
    return a, history


def associate_rnmf(
    factor: np.ndarray,
    tracklets: Sequence[Tracklet],
    annotated: Mapping[int, int],
    min_assign_score: float,
    probabilities: np.ndarray | None = None,
) -> Association:
    """Read identities off the factor's row argmax.

    Column index equals identity, so a row whose mass sits in column 0 is
    an active reject. Conflicting assignments (two overlapping tracklets
    voting for the same identity) are kept as-is; this algorithm trades
    conflicts for better recall and the metrics report the damage.

    Rows whose best column is below the floor are ones the factorization
    has no surviving links for, so it abstains rather than rejects. With
    ``probabilities`` given, abstained rows go through the same greedy
    conflict-blocked pass the iterative method uses, against the timeline
    the factor's assignments already occupy: a lone heavily-changed
    re-entry gets placed by the classifier if its identity is free in that
    window, while an impostor the classifier likes finds the identity
    occupied by the real player and falls to class 0. Without
    ``probabilities`` abstained rows go straight to class 0.
    """
    if factor.shape[0] != len(tracklets):
        raise ValueError("one factor row per tracklet required")
    if probabilities is not None and probabilities.shape[0] != len(tracklets):
        raise ValueError("one probability row per tracklet required")
    entries: dict[int, AssignedIdentity] = {}
    occupied: dict[int, list[Tracklet]] = {}
    abstained: list[int] = []
    for idx, t in enumerate(tracklets):
        if t.id in annotated:
            entries[t.id] = AssignedIdentity(t.id, annotated[t.id], PROV_ANNOTATED, 1.0)
            _occupy(occupied, annotated[t.id], t)
            continue
        row = factor[idx]
        col = int(np.argmax(row))
        value = float(row[col])
        if value < min_assign_score:
            if probabilities is None:
                entries[t.id] = AssignedIdentity(t.id, 0, PROV_UNASSIGNED, value)
            else:
                abstained.append(idx)
        else:
            entries[t.id] = AssignedIdentity(t.id, col, PROV_RNMF, value)
            _occupy(occupied, col, t)
    if abstained:
        _assign_by_score(probabilities.astype(float), tracklets, abstained,
                         occupied, PROV_FALLBACK, entries)
    return Association("rnmf", entries)
