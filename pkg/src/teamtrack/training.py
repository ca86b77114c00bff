"""Optimizer, training loop and gradient checking for the tracklet
classifier.

Training data is the small set of human-annotated tracklets. Each one is
resampled to a fixed number of detections, its per-detection appearance
embeddings are stacked, and the classifier is fit with cross-entropy over
the queries most confident in the target class, optionally plus a
batch-hard soft-margin triplet loss on the tracklet features.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ProjectConfig
from .core import (
    Annotation,
    EmbeddingMatrix,
    Tracklet,
    effective_annotations,
    gather_tracklet_features,
)
from .model import (
    ForwardOutput,
    TrackletClassifier,
    batch_hard_triplet_loss,
    select_queries,
)

logger = logging.getLogger(__name__)

GRADCHECK_THRESHOLD = 1e-4


class AdamW:
    """Adam with decoupled weight decay, applied to every parameter."""

    def __init__(self, params: dict[str, Tensor], lr: float, weight_decay: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._s = {k: np.empty_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        sqrt_corr2 = np.sqrt(1.0 - b2 ** self.t)
        # lr * (m/corr1) / (sqrt(v/corr2) + eps), refactored to minimize
        # full-array passes: the eps lands inside the square-rooted term
        scale = self.lr * sqrt_corr2 / corr1
        shift = self.eps * sqrt_corr2
        decay = 1.0 - self.lr * self.weight_decay
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v, s = self._m[name], self._v[name], self._s[name]
            np.multiply(g, g, out=s)
            v *= b2
            s *= 1.0 - b2
            v += s
            m *= b1
            np.multiply(g, 1.0 - b1, out=s)
            m += s
            np.sqrt(v, out=s)
            s += shift
            np.divide(m, s, out=s)
            s *= scale
            p.data *= decay
            p.data -= s


@dataclass
class TrainingSet:
    """Annotated tracklets prepared for the classifier."""

    inputs: np.ndarray        # (n, samples_per_track, embedding_dim)
    labels: np.ndarray        # (n,) identity per tracklet, 0 = not-tracked
    tracklet_ids: list[int]

    def __len__(self) -> int:
        return len(self.labels)


def build_training_set(
    tracklets: Sequence[Tracklet],
    embeddings: EmbeddingMatrix,
    annotations: Sequence[Annotation],
    config: ProjectConfig,
) -> TrainingSet:
    """Stack resampled features for every annotated tracklet.

    Later annotations of the same tracklet override earlier ones. Unknown
    tracklet ids or identities outside 0..n_players raise ValueError.
    """
    by_id = {t.id: t for t in tracklets}
    effective = effective_annotations(annotations)
    inputs, labels, ids = [], [], []
    for tid in sorted(effective):
        identity = effective[tid]
        if tid not in by_id:
            raise ValueError(f"annotation references unknown tracklet {tid}")
        if identity > config.n_players:
            raise ValueError(f"identity {identity} out of range for {config.n_players} players")
        inputs.append(gather_tracklet_features(by_id[tid], embeddings, config.samples_per_track))
        labels.append(identity)
        ids.append(tid)
    if not inputs:
        raise ValueError("no annotations to train on")
    return TrainingSet(np.stack(inputs), np.array(labels, dtype=np.intp), ids)


def _pair_batch(rng: np.random.Generator, labels: np.ndarray) -> np.ndarray:
    """Draw two identities and two samples of each, for triplet mining.

    The reject class takes part like any other label so its scores stay
    trained, but the triplet mining downstream never anchors on it; a bag
    of unrelated persons has no positives.
    """
    unique = np.unique(labels)
    chosen = rng.choice(unique, size=2, replace=False)
    idx = []
    for label in chosen:
        members = np.flatnonzero(labels == label)
        idx.extend(rng.choice(members, size=2, replace=len(members) < 2))
    return np.array(idx, dtype=np.intp)


def _epoch_batches(rng: np.random.Generator, labels: np.ndarray,
                   batch_size: int, use_pairs: bool) -> list[np.ndarray]:
    n = len(labels)
    steps = math.ceil(n / batch_size)
    if use_pairs:
        return [_pair_batch(rng, labels) for _ in range(steps)]
    perm = rng.permutation(n)
    return [perm[i * batch_size:(i + 1) * batch_size] for i in range(steps)]


def _train_step(model: TrackletClassifier, data: TrainingSet, batch: np.ndarray,
                alpha: int, optimizer: AdamW) -> tuple[float, float]:
    cfg = model.config
    y = data.labels[batch]
    logits, features = model.forward_batch(data.inputs[batch], train=True)

    sel_rows: list[int] = []
    sel_cols: list[int] = []
    top_cols: list[int] = []
    for i, label in enumerate(y):
        chosen = select_queries(logits.data[i], int(label), cfg.n_top_queries)
        sel_rows.extend([i] * len(chosen))
        sel_cols.extend(chosen)
        top_cols.append(chosen[0])
    sel_logits = ad.take(logits, (np.array(sel_rows), np.array(sel_cols)))
    loss_id = ad.cross_entropy(sel_logits, np.repeat(y, cfg.n_top_queries))

    if alpha == 1:
        f_t = ad.take(features, (np.arange(len(y)), np.array(top_cols)))
        loss_tri, _ = batch_hard_triplet_loss(f_t, y)
        total = loss_id + loss_tri
        tri_val = loss_tri.item()
    else:
        total = loss_id
        tri_val = 0.0

    model.zero_grad()
    total.backward()
    optimizer.step()
    return loss_id.item(), tri_val


EpochCallback = Callable[[int, int, dict], None]


def train(model: TrackletClassifier, data: TrainingSet, seed: int,
          epoch_callback: EpochCallback | None = None) -> list[dict]:
    """Fit the classifier on the annotated tracklets.

    Deterministic for a fixed (model init, data, seed). Returns one history
    row per epoch with the mean identity, triplet and total losses. The
    triplet term needs at least two distinct identities; with fewer it is
    disabled with a warning.
    """
    cfg = model.config
    if len(data) == 0:
        raise ValueError("empty training set")
    alpha = cfg.triplet_weight
    if alpha == 1 and len(np.unique(data.labels)) < 2:
        logger.warning("triplet loss requires two identities, training with identity loss only")
        alpha = 0
    rng = np.random.default_rng(seed)
    optimizer = AdamW(model.params, cfg.learning_rate, cfg.weight_decay)
    history: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        batches = _epoch_batches(rng, data.labels, cfg.batch_size, alpha == 1)
        id_sum = tri_sum = 0.0
        for batch in batches:
            id_val, tri_val = _train_step(model, data, batch, alpha, optimizer)
            id_sum += id_val
            tri_sum += tri_val
        n = len(batches)
        row = {
            "epoch": epoch,
            "id_loss": id_sum / n,
            "triplet_loss": tri_sum / n,
            "loss": (id_sum + tri_sum) / n,
        }
        history.append(row)
        if epoch_callback is not None:
            epoch_callback(epoch, cfg.epochs, row)
    return history


def loss_curve_csv(history: Sequence[dict]) -> str:
    """Render a training history as ``epoch,loss_id,loss_triplet,total``
    CSV text."""
    lines = ["epoch,loss_id,loss_triplet,total"]
    for row in history:
        lines.append(f"{row['epoch']},{row['id_loss']:.10g},"
                     f"{row['triplet_loss']:.10g},{row['loss']:.10g}")
    return "\n".join(lines) + "\n"


def classify_tracklets(
    model: TrackletClassifier,
    tracklets: Sequence[Tracklet],
    embeddings: EmbeddingMatrix,
) -> list[ForwardOutput]:
    """Run inference on every tracklet, in order."""
    cfg = model.config
    if not tracklets:
        return []
    stacks = np.stack([
        gather_tracklet_features(t, embeddings, cfg.samples_per_track)
        for t in tracklets
    ])
    return model.infer_all(stacks)


# -- finite-difference validation ---------------------------------------------


def _gradcheck_config(alpha: int, seed: int) -> ProjectConfig:
    return ProjectConfig(
        n_players=2,
        embedding_dim=12,
        model_dim=8,
        n_queries=2,
        n_top_queries=1,
        encoder_layers=1,
        decoder_layers=1,
        attention_heads=2,
        samples_per_track=3,
        min_track_len=3,
        triplet_weight=alpha,
        seed=seed,
    )


def gradient_check(alpha: int = 0, seed: int = 0, step: float = 1e-5) -> dict:
    """Compare backward() against central finite differences on a scaled-down
    classifier.

    Every parameter coordinate is perturbed by ±step and the relative error
    |analytic - numeric| / max(1, |analytic|, |numeric|) is collected. The
    query selection and triplet mining are recomputed per evaluation; the
    seed is chosen so their decisions are stable under the perturbation.
    """
    cfg = _gradcheck_config(alpha, seed)
    model = TrackletClassifier(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    x = rng.normal(size=(4, cfg.samples_per_track, cfg.embedding_dim))
    y = np.array([1, 1, 2, 2], dtype=np.intp)

    def loss_fn() -> Tensor:
        logits, features = model.forward_batch(x, train=True)
        rows, cols, tops = [], [], []
        for i, label in enumerate(y):
            chosen = select_queries(logits.data[i], int(label), cfg.n_top_queries)
            rows.extend([i] * len(chosen))
            cols.extend(chosen)
            tops.append(chosen[0])
        sel = ad.take(logits, (np.array(rows), np.array(cols)))
        total = ad.cross_entropy(sel, np.repeat(y, cfg.n_top_queries))
        if alpha == 1:
            f_t = ad.take(features, (np.arange(len(y)), np.array(tops)))
            tri, _ = batch_hard_triplet_loss(f_t, y)
            total = total + tri
        return total

    loss = loss_fn()
    model.zero_grad()
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in model.params.items()}

    max_rel = 0.0
    worst = ""
    n_coords = 0
    for name, p in model.params.items():
        flat = p.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            f_plus = loss_fn().item()
            flat[j] = orig - step
            f_minus = loss_fn().item()
            flat[j] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic[name].reshape(-1)[j])
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            n_coords += 1
            if rel > max_rel:
                max_rel = rel
                worst = f"{name}[{j}]"
    return {
        "alpha": alpha,
        "seed": seed,
        "step": step,
        "n_coords": n_coords,
        "max_rel_err": max_rel,
        "worst_coord": worst,
        "threshold": GRADCHECK_THRESHOLD,
        "passed": bool(max_rel < GRADCHECK_THRESHOLD),
    }
