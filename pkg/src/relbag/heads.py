"""Aggregation heads and the multi-label loss.

The passage head summarizes a passage once per relation: each relation owns a
query vector, attention runs over every position (padding included unless
``attend_pad`` is off), and a single binary classifier shared across all
relations turns each summary into a triple confidence. Intra-bag baseline
heads aggregate per-instance encodings instead (attention, averaging,
class-wise max pooling, or a single shared query).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncoderOutput

LOSS_CLIP = 1e-7

INTRA_BAG_MODES = ("att", "avg", "one", "shared_q")


@dataclass
class PassageAttHead:
    """Per-relation query vectors plus one shared binary classifier."""

    relation_queries: Tensor       # (N, d)
    classifier_weight: Tensor      # (d, 1)
    classifier_bias: Tensor        # (1,)
    attend_pad: bool = True

    @property
    def n_relations(self) -> int:
        return self.relation_queries.data.shape[0]

    def parameters(self) -> dict[str, Tensor]:
        return {"head.relation_queries": self.relation_queries,
                "head.classifier_weight": self.classifier_weight,
                "head.classifier_bias": self.classifier_bias}


@dataclass
class IntraBagHead:
    """Baseline head over independently encoded instances.

    Modes: ``att`` (per-relation attention over instances), ``avg`` (uniform
    weights), ``one`` (class-wise max over per-instance scores), ``shared_q``
    (one query vector for all relations). All modes score with the same
    per-class linear layer.
    """

    mode: str
    class_weight: Tensor                      # (N, d')
    class_bias: Tensor                        # (N,)
    relation_queries: Optional[Tensor] = None  # (N, d'), att mode only
    shared_query: Optional[Tensor] = None      # (d', 1), shared_q mode only

    def __post_init__(self):
        if self.mode not in INTRA_BAG_MODES:
            raise ValueError(f"unknown intra-bag mode {self.mode!r}")
        if self.mode == "att" and self.relation_queries is None:
            raise ValueError("att mode requires relation_queries")
        if self.mode == "shared_q" and self.shared_query is None:
            raise ValueError("shared_q mode requires shared_query")

    @property
    def n_relations(self) -> int:
        return self.class_weight.data.shape[0]

    def parameters(self) -> dict[str, Tensor]:
        out = {"head.class_weight": self.class_weight,
               "head.class_bias": self.class_bias}
        if self.relation_queries is not None:
            out["head.relation_queries"] = self.relation_queries
        if self.shared_query is not None:
            out["head.shared_query"] = self.shared_query
        return out


@dataclass
class TripleConfidence:
    """Scored relations for one bag plus the attention that produced them.

    ``attention`` rows are per relation: over passage positions for the
    passage head, over instances for the baselines.
    """

    bag_key: tuple[str, str]
    confidences: np.ndarray   # (N,) in [0, 1]
    attention: np.ndarray     # (N, L) or (N, n)


def init_passage_att_head(n_relations: int, hidden_dim: int, rng_seed: int,
                          attend_pad: bool = True, dtype=np.float32) -> PassageAttHead:
    rng = np.random.default_rng(rng_seed)
    return PassageAttHead(
        relation_queries=ad.parameter(
            ad.truncated_normal(rng, (n_relations, hidden_dim), dtype=dtype),
            name="head.relation_queries"),
        classifier_weight=ad.parameter(
            ad.truncated_normal(rng, (hidden_dim, 1), dtype=dtype),
            name="head.classifier_weight"),
        classifier_bias=ad.parameter(np.zeros(1, dtype=dtype), name="head.classifier_bias"),
        attend_pad=attend_pad)


def init_intra_bag_head(mode: str, n_relations: int, feat_dim: int, rng_seed: int,
                        dtype=np.float32) -> IntraBagHead:
    """The shared per-class scorer is drawn before any mode-specific parameter,
    so heads built from the same seed score identically on single-instance bags."""
    rng = np.random.default_rng(rng_seed)
    class_weight = ad.parameter(
        ad.truncated_normal(rng, (n_relations, feat_dim), dtype=dtype),
        name="head.class_weight")
    class_bias = ad.parameter(np.zeros(n_relations, dtype=dtype), name="head.class_bias")
    queries = shared = None
    if mode == "att":
        queries = ad.parameter(
            ad.truncated_normal(rng, (n_relations, feat_dim), dtype=dtype),
            name="head.relation_queries")
    elif mode == "shared_q":
        shared = ad.parameter(
            ad.truncated_normal(rng, (feat_dim, 1), dtype=dtype),
            name="head.shared_query")
    return IntraBagHead(mode=mode, class_weight=class_weight, class_bias=class_bias,
                        relation_queries=queries, shared_query=shared)


# ---------------------------------------------------------------------------
# passage head forward
# ---------------------------------------------------------------------------


def summarize_batch(z: Tensor, attn_mask: np.ndarray,
                    head: PassageAttHead) -> tuple[Tensor, Tensor]:
    """Summarize (B, L, d) embeddings into (B, N, d) per-relation vectors.

    Attention logits are plain dot products between relation queries and
    token embeddings; with ``attend_pad`` the softmax runs over all L
    positions, otherwise PAD positions are masked out.
    """
    B, L, d = z.data.shape
    queries = head.relation_queries                          # (N, d)
    logits = ad.matmul(queries, ad.transpose(z, (0, 2, 1)))  # (B, N, L)
    if head.attend_pad:
        mask = None
    else:
        dtype = z.data.dtype
        mask = np.where(attn_mask[:, None, :], np.asarray(0.0, dtype=dtype),
                        np.asarray(-np.inf, dtype=dtype))
    alphas = ad.softmax_masked(logits, mask)                 # (B, N, L)
    summaries = ad.matmul(alphas, z)                         # (B, N, d)
    return summaries, alphas


def summarize_passage(enc: EncoderOutput,
                      head: PassageAttHead) -> tuple[Tensor, Tensor]:
    """Per-relation summaries (N, d) and attention maps (N, L) for one passage."""
    L, d = enc.embeddings.data.shape
    z = ad.reshape(enc.embeddings, (1, L, d))
    summaries, alphas = summarize_batch(z, enc.attn_mask[None, :], head)
    return (ad.reshape(summaries, (head.n_relations, d)),
            ad.reshape(alphas, (head.n_relations, L)))


def score_batch(summaries: Tensor, head: PassageAttHead) -> Tensor:
    """Shared binary classifier + sigmoid over (..., N, d) summaries -> (..., N)."""
    logits = ad.add(ad.matmul(summaries, head.classifier_weight), head.classifier_bias)
    shape = summaries.data.shape[:-1]
    return ad.sigmoid(ad.reshape(logits, shape))


def score_triples(summaries: Tensor, head: PassageAttHead) -> Tensor:
    """Confidence vector in [0,1]^N; the same (w, b) scores every relation."""
    return score_batch(summaries, head)


def multilabel_loss(confidences: Tensor, gold: np.ndarray) -> Tensor:
    """Mean binary cross-entropy over relation slots (and any batch dims).

    ``gold`` is a {0,1} array of the same shape; NA bags are all-zero rows.
    Confidences are clipped to [1e-7, 1-1e-7] before the logs.
    """
    gold = np.asarray(gold)
    if gold.shape != confidences.data.shape:
        raise ValueError(
            f"gold shape {gold.shape} != confidences shape {confidences.data.shape}")
    gold = gold.astype(confidences.data.dtype)
    c = ad.clip(confidences, LOSS_CLIP, 1.0 - LOSS_CLIP)
    pos = ad.mul(ad.log(c), gold)
    neg = ad.mul(ad.log(ad.add(ad.mul(c, -1.0), 1.0)), 1.0 - gold)
    return ad.mul(ad.tmean(ad.add(pos, neg)), -1.0)


# ---------------------------------------------------------------------------
# intra-bag baselines
# ---------------------------------------------------------------------------


def _class_logits(vectors: Tensor, head: IntraBagHead) -> Tensor:
    """(…, d') -> (…, N) logits through the per-class linear layer."""
    return ad.add(ad.matmul(vectors, ad.transpose(head.class_weight, (1, 0))),
                  head.class_bias)


def intra_bag_forward(instance_encodings: Tensor,
                      head: IntraBagHead) -> tuple[Tensor, Tensor]:
    """Score one bag from its (n, d') instance encodings.

    Returns (confidences (N,), attention (N, n)); attention rows are the
    weights each relation put on the instances (one-hot argmax rows for
    ``one`` mode, uniform rows for ``avg``).
    """
    n, dp = instance_encodings.data.shape
    if n < 1:
        raise ValueError("intra_bag_forward: empty bag")
    N = head.n_relations
    mode = head.mode

    if mode == "att":
        logits = ad.matmul(head.relation_queries,
                           ad.transpose(instance_encodings, (1, 0)))   # (N, n)
        alphas = ad.softmax_masked(logits)
        reps = ad.matmul(alphas, instance_encodings)                   # (N, d')
        scores = ad.add(ad.tsum(ad.mul(reps, head.class_weight), axis=-1),
                        head.class_bias)                               # (N,)
        return ad.sigmoid(scores), alphas

    if mode == "avg":
        rep = ad.tmean(instance_encodings, axis=0, keepdims=True)      # (1, d')
        conf = ad.sigmoid(ad.reshape(_class_logits(rep, head), (N,)))
        attention = ad.Tensor(np.full((N, n), 1.0 / n, dtype=instance_encodings.data.dtype))
        return conf, attention

    if mode == "one":
        per_inst = ad.sigmoid(_class_logits(instance_encodings, head))  # (n, N)
        conf = ad.tmax(per_inst, axis=0)                                # (N,)
        picks = per_inst.data.argmax(axis=0)
        attention = np.zeros((N, n), dtype=instance_encodings.data.dtype)
        attention[np.arange(N), picks] = 1.0
        return conf, ad.Tensor(attention)

    # shared_q: one bag vector, scored per class
    logits = ad.reshape(ad.matmul(instance_encodings, head.shared_query), (1, n))
    alpha = ad.softmax_masked(logits)                                   # (1, n)
    rep = ad.matmul(alpha, instance_encodings)                           # (1, d')
    conf = ad.sigmoid(ad.reshape(_class_logits(rep, head), (N,)))
    attention = ad.reshape(concat_rows(alpha, N), (N, n))
    return conf, attention


def concat_rows(row: Tensor, n_copies: int) -> Tensor:
    """Stack the same (1, n) attention row for every relation."""
    return ad.concat([row] * n_copies, axis=0)
