"""Query-based transformer tracklet classifier.

Per-image appearance vectors of a resampled tracklet are projected from the
backbone dimension down to the model width, run through a self-attention
encoder (no positional encoding: the sampled frames form a set), then a
decoder with learned query embeddings cross-attends to the encoded frames.
A batch-norm head produces the tracklet feature vector and a linear head the
per-class scores. The best-scoring query provides the tracklet's single
score/feature pair.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ProjectConfig

logger = logging.getLogger(__name__)

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
FFN_MULT = 4


@dataclass
class ForwardOutput:
    """Inference result for one tracklet."""

    per_query_logits: np.ndarray    # (n_queries, n_classes)
    per_query_features: np.ndarray  # (n_queries, model_dim), post batch-norm
    best_query: int
    scores: np.ndarray              # logits row of the best query
    feature: np.ndarray             # feature row of the best query

    def probabilities(self) -> np.ndarray:
        z = self.scores - self.scores.max()
        e = np.exp(z)
        return e / e.sum()


def _xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


def _he_normal(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


def _check_finite(t: Tensor, stage: str) -> None:
    if not np.isfinite(t.data).all():
        raise FloatingPointError(f"non-finite activation in {stage}")


class TrackletClassifier:
    """Holds the parameter tensors, running batch-norm statistics and the
    forward pass.

    ``dtype`` selects the compute precision. float32 is the production
    default; the gradient-check suite builds a float64 instance because
    finite differences need the headroom. Either way the random draws at
    init are identical (generated in float64, then cast), so the two
    precisions start from the same point.
    """

    def __init__(self, config: ProjectConfig, seed: int | None = None,
                 dtype: np.dtype = np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.running_mean = np.zeros(config.model_dim, dtype=self.dtype)
        self.running_var = np.ones(config.model_dim, dtype=self.dtype)
        if seed is not None:
            self._init_params(np.random.default_rng(seed))

    # -- parameters ---------------------------------------------------------

    def _param(self, name: str, data: np.ndarray) -> None:
        self.params[name] = Tensor(np.asarray(data, dtype=self.dtype),
                                   requires_grad=True)

    def _init_attention(self, rng, prefix: str) -> None:
        d = self.config.model_dim
        for part in ("q", "k", "v", "o"):
            self._param(f"{prefix}.w{part}", _xavier_uniform(rng, d, d))
            self._param(f"{prefix}.b{part}", np.zeros(d))

    def _init_block_tail(self, rng, prefix: str) -> None:
        d = self.config.model_dim
        hidden = FFN_MULT * d
        self._param(f"{prefix}.ln1.g", np.ones(d))
        self._param(f"{prefix}.ln1.b", np.zeros(d))
        self._param(f"{prefix}.ffn.w1", _xavier_uniform(rng, d, hidden))
        self._param(f"{prefix}.ffn.b1", np.zeros(hidden))
        self._param(f"{prefix}.ffn.w2", _xavier_uniform(rng, hidden, d))
        self._param(f"{prefix}.ffn.b2", np.zeros(d))
        self._param(f"{prefix}.ln2.g", np.ones(d))
        self._param(f"{prefix}.ln2.b", np.zeros(d))

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.config
        d = cfg.model_dim
        self._param("proj.w", _he_normal(rng, cfg.embedding_dim, d))
        self._param("proj.b", np.zeros(d))
        for i in range(cfg.encoder_layers):
            self._init_attention(rng, f"enc{i}.attn")
            self._init_block_tail(rng, f"enc{i}")
        self._param("queries", rng.normal(0.0, 1.0, size=(cfg.n_queries, d)))
        for i in range(cfg.decoder_layers):
            self._init_attention(rng, f"dec{i}.self")
            self._param(f"dec{i}.lns.g", np.ones(d))
            self._param(f"dec{i}.lns.b", np.zeros(d))
            self._init_attention(rng, f"dec{i}.cross")
            self._init_block_tail(rng, f"dec{i}")
        self._param("bn.g", np.ones(d))
        self._param("bn.b", np.zeros(d))
        self._param("cls.w", _he_normal(rng, d, cfg.n_classes))
        self._param("cls.b", np.zeros(cfg.n_classes))

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -- forward ------------------------------------------------------------

    def _attention(self, prefix: str, x_q: Tensor, x_kv: Tensor) -> Tensor:
        p = self.params
        heads = self.config.attention_heads
        d = self.config.model_dim
        hd = d // heads
        bsz, n_q = x_q.shape[0], x_q.shape[1]
        n_kv = x_kv.shape[1]

        def split(t: Tensor, n: int) -> Tensor:
            return ad.transpose(ad.reshape(t, (bsz, n, heads, hd)), (0, 2, 1, 3))

        q = split(ad.linear(x_q, p[f"{prefix}.wq"], p[f"{prefix}.bq"]), n_q)
        k = split(ad.linear(x_kv, p[f"{prefix}.wk"], p[f"{prefix}.bk"]), n_kv)
        v = split(ad.linear(x_kv, p[f"{prefix}.wv"], p[f"{prefix}.bv"]), n_kv)
        att = ad.softmax(ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), hd**-0.5))
        ctx = ad.reshape(ad.transpose(ad.matmul(att, v), (0, 2, 1, 3)), (bsz, n_q, d))
        return ad.linear(ctx, p[f"{prefix}.wo"], p[f"{prefix}.bo"])

    def _block_tail(self, prefix: str, x: Tensor, sub: Tensor) -> Tensor:
        p = self.params
        x = ad.layer_norm(x + sub, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
        h = ad.linear(ad.relu(ad.linear(x, p[f"{prefix}.ffn.w1"], p[f"{prefix}.ffn.b1"])),
                      p[f"{prefix}.ffn.w2"], p[f"{prefix}.ffn.b2"])
        return ad.layer_norm(x + h, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])

    def forward_batch(self, x: np.ndarray, train: bool) -> tuple[Tensor, Tensor]:
        """Run a (batch, samples, embedding_dim) stack of tracklet features.

        Returns (logits, features), shaped (batch, n_queries, n_classes) and
        (batch, n_queries, model_dim). Train mode uses batch statistics in
        the batch-norm head and updates the running averages.
        """
        cfg = self.config
        p = self.params
        if x.ndim != 3 or x.shape[2] != cfg.embedding_dim:
            raise ValueError(f"bad input shape {x.shape}")
        bsz = x.shape[0]
        x = np.ascontiguousarray(x, dtype=self.dtype)

        h = ad.linear(Tensor(x), p["proj.w"], p["proj.b"])
        _check_finite(h, "input projection")
        for i in range(cfg.encoder_layers):
            h = self._block_tail(f"enc{i}", h, self._attention(f"enc{i}.attn", h, h))
            _check_finite(h, f"encoder layer {i}")
        memory = h

        q = ad.expand_leading(p["queries"], bsz)
        for i in range(cfg.decoder_layers):
            q = ad.layer_norm(q + self._attention(f"dec{i}.self", q, q),
                              p[f"dec{i}.lns.g"], p[f"dec{i}.lns.b"])
            q = self._block_tail(f"dec{i}", q, self._attention(f"dec{i}.cross", q, memory))
            _check_finite(q, f"decoder layer {i}")

        flat = ad.reshape(q, (bsz * cfg.n_queries, cfg.model_dim))
        if train:
            normed, mu, var = ad.batch_norm_train(flat, p["bn.g"], p["bn.b"], BN_EPS)
            n = flat.shape[0]
            unbiased = var * (n / max(n - 1, 1))
            self.running_mean = (1 - BN_MOMENTUM) * self.running_mean + BN_MOMENTUM * mu
            self.running_var = (1 - BN_MOMENTUM) * self.running_var + BN_MOMENTUM * unbiased
        else:
            normed = ad.batch_norm_eval(flat, p["bn.g"], p["bn.b"],
                                        self.running_mean, self.running_var, BN_EPS)
        _check_finite(normed, "batch-norm head")
        features = ad.reshape(normed, (bsz, cfg.n_queries, cfg.model_dim))
        logits = ad.linear(features, p["cls.w"], p["cls.b"])
        _check_finite(logits, "classifier head")
        return logits, features

    def forward(self, x: np.ndarray) -> ForwardOutput:
        """Inference on a single (samples, embedding_dim) tracklet."""
        logits, features = self.forward_batch(x[None], train=False)
        return self._pick(logits.data[0], features.data[0])

    @staticmethod
    def _pick(logits: np.ndarray, features: np.ndarray) -> ForwardOutput:
        probs = _softmax_rows(logits)
        best = int(np.argmax(probs.max(axis=1)))
        return ForwardOutput(logits, features, best, logits[best], features[best])

    def infer_all(self, feature_stacks: np.ndarray, batch: int = 64) -> list[ForwardOutput]:
        """Batched inference over (n, samples, embedding_dim) stacks."""
        out = []
        for start in range(0, len(feature_stacks), batch):
            logits, features = self.forward_batch(feature_stacks[start:start + batch], train=False)
            out.extend(self._pick(l, f) for l, f in zip(logits.data, features.data))
        return out


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def select_queries(per_query_logits: np.ndarray, target_class: int, n_top: int) -> list[int]:
    """Indices of the ``n_top`` queries with the highest softmax probability
    of ``target_class``, descending; ties break toward the lower index."""
    probs = _softmax_rows(per_query_logits)[:, target_class]
    order = np.argsort(-probs, kind="stable")
    return [int(i) for i in order[:n_top]]


def id_loss(selected_logits: Tensor, target: int) -> Tensor:
    """Mean cross-entropy of the selected query logits against the target
    class."""
    n = selected_logits.shape[0]
    return ad.cross_entropy(selected_logits, np.full(n, target, dtype=np.intp))


def pairwise_distances(features: Tensor) -> Tensor:
    """Euclidean distance matrix of a (batch, dim) feature tensor.

    A tiny constant inside the square root keeps the gradient finite at
    zero distance.
    """
    sq = ad.sum_(ad.mul(features, features), axis=1)
    n = features.shape[0]
    gram = ad.matmul(features, ad.transpose(features, (1, 0)))
    d2 = ad.reshape(sq, (n, 1)) + ad.reshape(sq, (1, n)) - ad.mul(gram, 2.0)
    return ad.sqrt(ad.relu(d2) + 1e-12)


def batch_hard_triplet_loss(features: Tensor, labels: np.ndarray) -> tuple[Tensor, int]:
    """Soft-margin triplet loss with batch-hard mining.

    For each anchor that has at least one positive (same label, other
    sample) and one negative, take its farthest positive and nearest
    negative and average softplus(d_pos - d_neg). Returns (loss, number of
    valid anchors); anchors without a positive or negative are skipped, and
    an all-invalid batch yields a zero loss with a warning.

    Label 0 is the reject class, a bag of unrelated persons rather than one
    identity, so its samples never anchor a triplet and never count as
    positives for each other; they still push tracked identities away as
    negatives.
    """
    labels = np.asarray(labels)
    n = len(labels)
    dist = pairwise_distances(features)
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool) & (labels[None, :] != 0)
    neg_mask = ~same

    anchors, pos_idx, neg_idx = [], [], []
    for a in range(n):
        if labels[a] == 0 or not pos_mask[a].any() or not neg_mask[a].any():
            continue
        row = dist.data[a]
        anchors.append(a)
        pos_idx.append(int(np.argmax(np.where(pos_mask[a], row, -np.inf))))
        neg_idx.append(int(np.argmin(np.where(neg_mask[a], row, np.inf))))
    if not anchors:
        logger.warning("triplet batch has no anchor with both a positive and a negative")
        return Tensor(0.0), 0

    idx_a = np.array(anchors)
    d_pos = ad.take(dist, (idx_a, np.array(pos_idx)))
    d_neg = ad.take(dist, (idx_a, np.array(neg_idx)))
    return ad.mean_(ad.softplus(d_pos - d_neg)), len(anchors)
