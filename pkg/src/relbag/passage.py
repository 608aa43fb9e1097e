"""Vocabulary handling and construction of fixed-length instance passages.

A passage concatenates a bag's instances in a seed-determined random order:
position 0 is [CLS], every included instance is wrapped with entity markers
and followed by [SEP], and the remainder is [PAD]. Instances are drawn
without replacement; each drawn instance is included iff it still fits the
token budget, so at the end either the whole bag is included or adding any
excluded instance would exceed the budget.
"""

from __future__ import annotations

import hashlib
import logging
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Bag, Instance

log = logging.getLogger(__name__)

CLS, SEP, PAD, UNK = "[CLS]", "[SEP]", "[PAD]", "[UNK]"
HEAD_OPEN, HEAD_CLOSE, TAIL_OPEN, TAIL_CLOSE = "<h>", "</h>", "<t>", "</t>"
RESERVED = (CLS, SEP, PAD, UNK, HEAD_OPEN, HEAD_CLOSE, TAIL_OPEN, TAIL_CLOSE)
CLS_ID, SEP_ID, PAD_ID, UNK_ID = 0, 1, 2, 3
HEAD_OPEN_ID, HEAD_CLOSE_ID, TAIL_OPEN_ID, TAIL_CLOSE_ID = 4, 5, 6, 7


class PassageError(ValueError):
    """Raised when a passage cannot be built for a bag."""


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary parts (safe across processes)."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2s(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFF_FFFF_FFFF_FFFF


class Vocabulary:
    """Token-to-id map with the eight reserved tokens pinned at ids 0..7.

    Surface-text lookups never return reserved ids: a corpus token that spells
    "[PAD]" gets its own fresh id.
    """

    def __init__(self, corpus_tokens: Sequence[str] = ()):
        self._corpus: dict[str, int] = {}
        for tok in corpus_tokens:
            if tok not in self._corpus:
                self._corpus[tok] = len(RESERVED) + len(self._corpus)

    def __len__(self) -> int:
        return len(RESERVED) + len(self._corpus)

    @property
    def size(self) -> int:
        return len(self)

    def id_of_text(self, token: str) -> int:
        """Id for a surface token; unknown tokens map to [UNK]."""
        return self._corpus.get(token, UNK_ID)

    def token_of_id(self, tid: int) -> str:
        if tid < len(RESERVED):
            return RESERVED[tid]
        for tok, i in self._corpus.items():
            if i == tid:
                return tok
        raise KeyError(tid)

    def corpus_tokens(self) -> list[str]:
        return list(self._corpus)

    def save(self, path: str | Path):
        """One token per line, line number = id, reserved tokens first."""
        lines = list(RESERVED) + self.corpus_tokens()
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[: len(RESERVED)]) != RESERVED:
            raise ValueError(f"{path}: reserved token header mismatch")
        return cls(lines[len(RESERVED):])


def build_vocab(instances: Sequence[Instance], min_count: int = 1) -> Vocabulary:
    """Vocabulary of surface tokens with corpus frequency >= min_count.

    Tokens enter in first-appearance order so the result is deterministic for
    a given corpus. Reserved tokens are never overridden.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    first_seen: list[str] = []
    seen: set[str] = set()
    for inst in instances:
        for tok in inst.text_tokens:
            counts[tok] += 1
            if tok not in seen:
                seen.add(tok)
                first_seen.append(tok)
    return Vocabulary([t for t in first_seen if counts[t] >= min_count])


def encode_instance(inst: Instance, vocab: Vocabulary) -> list[int]:
    """Token ids with <h>..</h> and <t>..</t> inserted around the entity spans."""
    ids, _, _ = encode_instance_with_markers(inst, vocab)
    return ids


def encode_instance_with_markers(
        inst: Instance, vocab: Vocabulary) -> tuple[list[int], tuple[int, int], tuple[int, int]]:
    """Like encode_instance but also returns (open, close) marker positions
    for head and tail within the encoded sequence."""
    hs, he = inst.head.span
    ts, te = inst.tail.span
    if hs < te and ts < he:
        raise ValueError(f"overlapping entity spans in instance {inst.text_tokens}")
    ids = [vocab.id_of_text(t) for t in inst.text_tokens]
    # insert right-to-left so earlier positions stay valid; at a shared index
    # (adjacent spans) the open marker goes in first so the close lands before it
    inserts = sorted(
        [(he, HEAD_CLOSE_ID), (hs, HEAD_OPEN_ID), (te, TAIL_CLOSE_ID), (ts, TAIL_OPEN_ID)],
        key=lambda x: (-x[0], x[1] in (HEAD_CLOSE_ID, TAIL_CLOSE_ID)))
    for pos, tok in inserts:
        ids.insert(pos, tok)
    h_open = ids.index(HEAD_OPEN_ID)
    h_close = ids.index(HEAD_CLOSE_ID)
    t_open = ids.index(TAIL_OPEN_ID)
    t_close = ids.index(TAIL_CLOSE_ID)
    return ids, (h_open, h_close), (t_open, t_close)


@dataclass
class Passage:
    """Fixed-length token-id view of a bag.

    ``instance_boundaries`` are [start, end) spans of each included instance's
    encoded tokens (its trailing [SEP] sits at ``end``). ``marker_positions``
    holds absolute positions of (<h>, </h>, <t>, </t>) per included instance.
    ``included`` indexes into the source bag in inclusion order.
    """

    token_ids: np.ndarray            # (L_max,) int64
    attn_mask: np.ndarray            # (L_max,) bool, True = non-PAD
    instance_boundaries: list[tuple[int, int]]
    marker_positions: list[tuple[int, int, int, int]]
    included: list[int]
    pre_truncation_token_count: int

    @property
    def content_length(self) -> int:
        return int(self.attn_mask.sum())


def encoded_length(inst: Instance) -> int:
    """Length of an instance once markers are inserted."""
    return len(inst.text_tokens) + 4


def pre_truncation_count(bag: Bag) -> int:
    """Token count of the untruncated passage: [CLS] plus every encoded
    instance with its [SEP]."""
    return 1 + sum(encoded_length(inst) + 1 for inst in bag.instances)


def build_passage(bag: Bag, vocab: Vocabulary, L_max: int, rng_seed: int) -> Passage:
    """Assemble a passage from a seed-determined random draw of bag instances.

    Every instance in the draw order is included iff its encoded tokens plus
    one [SEP] still fit within ``L_max``; oversized instances are skipped with
    a warning. Raises ``PassageError`` when no instance fits at all.
    """
    if not bag.instances:
        raise PassageError(f"bag {bag.key}: empty bag")
    encoded = [encode_instance_with_markers(inst, vocab) for inst in bag.instances]
    shortest = min(len(ids) for ids, _, _ in encoded)
    if 1 + shortest + 1 > L_max:
        raise PassageError(
            f"bag {bag.key}: no instance fits (shortest needs {shortest + 2} tokens, L_max={L_max})")

    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(len(bag.instances))

    tokens: list[int] = [CLS_ID]
    boundaries: list[tuple[int, int]] = []
    markers: list[tuple[int, int, int, int]] = []
    included: list[int] = []
    for idx in order:
        ids, (h_open, h_close), (t_open, t_close) = encoded[idx]
        if len(ids) + 2 > L_max:
            warnings.warn(
                f"bag {bag.key}: instance {idx} of encoded length {len(ids)} "
                f"cannot fit in L_max={L_max}, skipping")
            continue
        if len(tokens) + len(ids) + 1 > L_max:
            continue
        start = len(tokens)
        tokens.extend(ids)
        tokens.append(SEP_ID)
        boundaries.append((start, start + len(ids)))
        markers.append((start + h_open, start + h_close, start + t_open, start + t_close))
        included.append(int(idx))

    content = len(tokens)
    token_ids = np.full(L_max, PAD_ID, dtype=np.int64)
    token_ids[:content] = tokens
    attn_mask = np.zeros(L_max, dtype=bool)
    attn_mask[:content] = True
    return Passage(token_ids=token_ids,
                   attn_mask=attn_mask,
                   instance_boundaries=boundaries,
                   marker_positions=markers,
                   included=included,
                   pre_truncation_token_count=pre_truncation_count(bag))
