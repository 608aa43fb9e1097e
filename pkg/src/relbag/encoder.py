"""Transformer encoder over fixed-length passages.

Padding is masked on both sides of self-attention: non-PAD queries attend
only to non-PAD keys, and PAD positions are excluded as queries altogether,
so a PAD position's output depends only on its position index and the
parameters, never on the surrounding passage. PAD rows still pass through
the residual/layer-norm/FFN path and stay finite and trainable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .passage import Passage


@dataclass
class EncoderConfig:
    num_layers: int = 2
    num_heads: int = 4
    hidden_dim: int = 64
    ffn_dim: int = 256
    L_max: int = 128
    vocab_size: int = 8
    dropout_rate: float = 0.1
    positional: str = "learned"  # or "sinusoidal"

    def __post_init__(self):
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if self.L_max < 2:
            raise ValueError(f"L_max must be >= 2, got {self.L_max}")
        if self.positional not in ("learned", "sinusoidal"):
            raise ValueError(f"unknown positional mode {self.positional!r}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "num_layers", "num_heads", "hidden_dim", "ffn_dim", "L_max",
            "vocab_size", "dropout_rate", "positional")}


def desk_scale_config(vocab_size: int, L_max: int = 128, **overrides) -> EncoderConfig:
    """2 layers / 4 heads / d=64 / ffn=256 default used throughout the tests."""
    kw = dict(num_layers=2, num_heads=4, hidden_dim=64, ffn_dim=256,
              L_max=L_max, vocab_size=vocab_size)
    kw.update(overrides)
    return EncoderConfig(**kw)


def full_scale_config(vocab_size: int) -> EncoderConfig:
    """BERT-base-sized mirror (12/12/768, L_max=512); provided, not exercised."""
    return EncoderConfig(num_layers=12, num_heads=12, hidden_dim=768,
                         ffn_dim=3072, L_max=512, vocab_size=vocab_size)


@dataclass
class EncoderOutput:
    """Contextual embeddings for one passage, PAD positions included."""

    embeddings: Tensor           # (L, d)
    attn_mask: np.ndarray        # (L,) bool copied from the passage


def _sinusoidal_table(L: int, d: int, dtype) -> np.ndarray:
    pos = np.arange(L)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)


def init_encoder_params(config: EncoderConfig, rng_seed: int,
                        dtype=np.float32) -> dict[str, Tensor]:
    """Truncated-normal weights (std 0.02), zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(rng_seed)
    d, f = config.hidden_dim, config.ffn_dim

    def w(shape):
        return ad.truncated_normal(rng, shape, std=0.02, dtype=dtype)

    def zeros(shape):
        return np.zeros(shape, dtype=dtype)

    params: dict[str, Tensor] = {}

    def put(name, arr):
        params[name] = ad.parameter(arr, name=name)

    put("emb.tok", w((config.vocab_size, d)))
    if config.positional == "learned":
        put("emb.pos", w((config.L_max, d)))
    put("emb.ln.gain", np.ones(d, dtype=dtype))
    put("emb.ln.bias", zeros(d))
    for li in range(config.num_layers):
        p = f"layer{li}."
        for proj in ("wq", "wk", "wv", "wo"):
            put(p + f"attn.{proj}", w((d, d)))
        for proj in ("bq", "bk", "bv", "bo"):
            put(p + f"attn.{proj}", zeros(d))
        put(p + "ln1.gain", np.ones(d, dtype=dtype))
        put(p + "ln1.bias", zeros(d))
        put(p + "ffn.w1", w((d, f)))
        put(p + "ffn.b1", zeros(f))
        put(p + "ffn.w2", w((f, d)))
        put(p + "ffn.b2", zeros(d))
        put(p + "ln2.gain", np.ones(d, dtype=dtype))
        put(p + "ln2.bias", zeros(d))
    return params


def encode_tokens(token_ids: np.ndarray,
                  attn_mask: np.ndarray,
                  params: dict[str, Tensor],
                  config: EncoderConfig,
                  train_mode: bool = False,
                  rng: Optional[np.random.Generator] = None) -> Tensor:
    """Encode a batch of fixed-length sequences; returns (B, L, d) embeddings.

    ``token_ids`` is (B, L) int, ``attn_mask`` (B, L) bool with True on
    non-PAD positions. L may be shorter than config.L_max (the positional
    table is sliced); the passage pipeline always uses the full L_max.
    """
    token_ids = np.atleast_2d(np.asarray(token_ids))
    attn_mask = np.atleast_2d(np.asarray(attn_mask)).astype(bool)
    B, L = token_ids.shape
    if L > config.L_max:
        raise ValueError(f"sequence length {L} exceeds L_max {config.L_max}")
    if token_ids.size and int(token_ids.max()) >= config.vocab_size:
        raise ValueError(
            f"token id {int(token_ids.max())} out of range for vocab_size {config.vocab_size}")
    if train_mode and config.dropout_rate > 0.0 and rng is None:
        raise ValueError("train_mode with dropout requires an rng")

    d, H = config.hidden_dim, config.num_heads
    dk = d // H
    dtype = params["emb.tok"].data.dtype

    x = ad.embedding(params["emb.tok"], token_ids)           # (B, L, d)
    if config.positional == "learned":
        pos = ad.gather_rows(params["emb.pos"], np.arange(L))  # (L, d)
        x = ad.add(x, pos)
    else:
        x = ad.add(x, Tensor(_sinusoidal_table(L, d, dtype)))
    x = ad.layer_norm(x, params["emb.ln.gain"], params["emb.ln.bias"])
    if train_mode and config.dropout_rate > 0.0:
        x = ad.dropout(x, config.dropout_rate, rng)

    neg = np.asarray(-np.inf, dtype=dtype)
    zero = np.asarray(0.0, dtype=dtype)
    key_mask = np.where(attn_mask[:, None, None, :], zero, neg)    # (B,1,1,L)
    query_mask = np.where(attn_mask[:, None, :, None], zero, neg)  # (B,1,L,1)
    add_mask = key_mask + query_mask
    qmask = attn_mask[:, :, None].astype(dtype)                    # (B,L,1)

    for li in range(config.num_layers):
        p = f"layer{li}."

        def split_heads(t):
            return ad.transpose(ad.reshape(t, (B, L, H, dk)), (0, 2, 1, 3))

        q = split_heads(ad.linear(x, params[p + "attn.wq"], params[p + "attn.bq"]))
        k = split_heads(ad.linear(x, params[p + "attn.wk"], params[p + "attn.bk"]))
        v = split_heads(ad.linear(x, params[p + "attn.wv"], params[p + "attn.bv"]))

        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
        probs = ad.softmax_masked(scores, add_mask)                # PAD rows all-zero
        if train_mode and config.dropout_rate > 0.0:
            probs = ad.dropout(probs, config.dropout_rate, rng)
        ctx = ad.matmul(probs, v)                                  # (B,H,L,dk)
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (B, L, d))
        attn_out = ad.linear(ctx, params[p + "attn.wo"], params[p + "attn.bo"])
        # PAD queries bypass the attention sublayer entirely (kills the bias leak)
        attn_out = ad.mul(attn_out, qmask)
        if train_mode and config.dropout_rate > 0.0:
            attn_out = ad.dropout(attn_out, config.dropout_rate, rng)
        x = ad.layer_norm(ad.add(x, attn_out),
                          params[p + "ln1.gain"], params[p + "ln1.bias"])

        h = ad.gelu(ad.linear(x, params[p + "ffn.w1"], params[p + "ffn.b1"]))
        h = ad.linear(h, params[p + "ffn.w2"], params[p + "ffn.b2"])
        if train_mode and config.dropout_rate > 0.0:
            h = ad.dropout(h, config.dropout_rate, rng)
        x = ad.layer_norm(ad.add(x, h),
                          params[p + "ln2.gain"], params[p + "ln2.bias"])
    return x


def encode(passage: Passage,
           params: dict[str, Tensor],
           config: EncoderConfig,
           train_mode: bool = False,
           rng: Optional[np.random.Generator] = None) -> EncoderOutput:
    """Encode one passage of exactly config.L_max tokens."""
    if passage.token_ids.shape[0] != config.L_max:
        raise ValueError(
            f"passage length {passage.token_ids.shape[0]} != L_max {config.L_max}")
    out = encode_tokens(passage.token_ids[None, :], passage.attn_mask[None, :],
                        params, config, train_mode=train_mode, rng=rng)
    emb = ad.reshape(out, (config.L_max, config.hidden_dim))
    return EncoderOutput(embeddings=emb, attn_mask=passage.attn_mask.copy())
