"""End-to-end models: featurization, batched forward, and eval scoring.

Two families share the same encoder stack. The passage model concatenates a
bag into one passage and summarizes it per relation; the intra-bag baselines
encode each instance standalone ([CLS] tokens [SEP]) and aggregate the
per-instance vectors built from the hidden states at the <h> and <t> marker
positions.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import heads as H
from .autodiff import Tensor
from .data import Bag, RelationInventory
from .encoder import EncoderConfig, EncoderOutput, encode_tokens, init_encoder_params
from .passage import (CLS_ID, PAD_ID, SEP_ID, Passage, Vocabulary, build_passage,
                      derive_seed, encode_instance_with_markers, encoded_length)

EVAL_SEED = 0

PASSAGE_ATT = "passage_att"
MODEL_KINDS = (PASSAGE_ATT,) + H.INTRA_BAG_MODES


def gold_vector(bag: Bag, n_relations: int, dtype=np.float32) -> np.ndarray:
    out = np.zeros(n_relations, dtype=dtype)
    for rid in bag.gold_relations:
        out[rid] = 1.0
    return out


def eval_passage_seed(bag: Bag, eval_seed: int = EVAL_SEED) -> int:
    """Fixed per-bag seed so evaluation passages are reproducible."""
    return derive_seed("eval", eval_seed, bag.key[0], bag.key[1])


class PassageAttModel:
    """Passage encoder + per-relation attention summarizer + shared classifier."""

    kind = PASSAGE_ATT

    def __init__(self, vocab: Vocabulary, inventory: RelationInventory,
                 enc_config: EncoderConfig, enc_params: dict[str, Tensor],
                 head: H.PassageAttHead):
        self.vocab = vocab
        self.inventory = inventory
        self.enc_config = enc_config
        self.enc_params = enc_params
        self.head = head

    @classmethod
    def build(cls, vocab: Vocabulary, inventory: RelationInventory,
              enc_config: EncoderConfig, seed: int, attend_pad: bool = True,
              dtype=np.float32) -> "PassageAttModel":
        if enc_config.vocab_size != len(vocab):
            raise ValueError(
                f"enc_config.vocab_size {enc_config.vocab_size} != vocabulary size {len(vocab)}")
        params = init_encoder_params(enc_config, derive_seed(seed, "encoder"), dtype=dtype)
        head = H.init_passage_att_head(inventory.n_relations, enc_config.hidden_dim,
                                       derive_seed(seed, "head"),
                                       attend_pad=attend_pad, dtype=dtype)
        return cls(vocab, inventory, enc_config, params, head)

    @property
    def attend_pad(self) -> bool:
        return self.head.attend_pad

    def parameters(self) -> dict[str, Tensor]:
        out = {f"enc.{k}": v for k, v in self.enc_params.items()}
        out.update(self.head.parameters())
        return out

    def passage_for(self, bag: Bag, seed: int) -> Passage:
        return build_passage(bag, self.vocab, self.enc_config.L_max, seed)

    def forward_passages(self, passages: Sequence[Passage], train_mode: bool = False,
                         rng: Optional[np.random.Generator] = None
                         ) -> tuple[Tensor, Tensor]:
        """Score a batch of passages: confidences (B, N) and attention (B, N, L)."""
        ids = np.stack([p.token_ids for p in passages])
        mask = np.stack([p.attn_mask for p in passages])
        z = encode_tokens(ids, mask, self.enc_params, self.enc_config,
                          train_mode=train_mode, rng=rng)
        summaries, alphas = H.summarize_batch(z, mask, self.head)
        return H.score_batch(summaries, self.head), alphas

    def forward_bags(self, bags: Sequence[Bag], passage_seeds: Sequence[int],
                     train_mode: bool = False,
                     rng: Optional[np.random.Generator] = None) -> tuple[Tensor, Tensor]:
        passages = [self.passage_for(b, s) for b, s in zip(bags, passage_seeds)]
        return self.forward_passages(passages, train_mode=train_mode, rng=rng)

    def confidences(self, bags: Sequence[Bag], eval_seed: int = EVAL_SEED,
                    batch_size: int = 32) -> np.ndarray:
        """(B, N) confidence matrix under fixed eval passage seeds."""
        rows = []
        with ad.no_grad():
            for i in range(0, len(bags), batch_size):
                chunk = bags[i:i + batch_size]
                seeds = [eval_passage_seed(b, eval_seed) for b in chunk]
                conf, _ = self.forward_bags(chunk, seeds)
                rows.append(conf.data.copy())
        return np.concatenate(rows) if rows else np.zeros((0, self.inventory.n_relations))

    def triple_confidence(self, bag: Bag,
                          eval_seed: int = EVAL_SEED) -> tuple[H.TripleConfidence, Passage]:
        """Detailed per-relation scores and position attention for one bag."""
        passage = self.passage_for(bag, eval_passage_seed(bag, eval_seed))
        with ad.no_grad():
            conf, alphas = self.forward_passages([passage])
        return H.TripleConfidence(bag_key=bag.key,
                                  confidences=conf.data[0].copy(),
                                  attention=alphas.data[0].copy()), passage


class IntraBagModel:
    """Baseline family: standalone instance encoding + intra-bag aggregation."""

    def __init__(self, vocab: Vocabulary, inventory: RelationInventory,
                 enc_config: EncoderConfig, enc_params: dict[str, Tensor],
                 head: H.IntraBagHead, instance_len: int):
        self.vocab = vocab
        self.inventory = inventory
        self.enc_config = enc_config
        self.enc_params = enc_params
        self.head = head
        self.instance_len = instance_len

    kind = property(lambda self: self.head.mode)

    @classmethod
    def build(cls, vocab: Vocabulary, inventory: RelationInventory,
              enc_config: EncoderConfig, seed: int, mode: str,
              instance_len: int, dtype=np.float32) -> "IntraBagModel":
        if instance_len > enc_config.L_max:
            raise ValueError(f"instance_len {instance_len} exceeds L_max {enc_config.L_max}")
        params = init_encoder_params(enc_config, derive_seed(seed, "encoder"), dtype=dtype)
        head = H.init_intra_bag_head(mode, inventory.n_relations,
                                     2 * enc_config.hidden_dim,
                                     derive_seed(seed, "head"), dtype=dtype)
        return cls(vocab, inventory, enc_config, params, head, instance_len)

    def parameters(self) -> dict[str, Tensor]:
        out = {f"enc.{k}": v for k, v in self.enc_params.items()}
        out.update(self.head.parameters())
        return out

    def _instance_arrays(self, bags: Sequence[Bag]):
        """Stack every instance of every bag as ([CLS] tokens [SEP] [PAD]*)."""
        ids_rows, mask_rows, h_pos, t_pos, counts = [], [], [], [], []
        for bag in bags:
            counts.append(len(bag.instances))
            for inst in bag.instances:
                ids, (h_open, _), (t_open, _) = encode_instance_with_markers(inst, self.vocab)
                if len(ids) + 2 > self.instance_len:
                    raise ValueError(
                        f"bag {bag.key}: encoded instance of length {len(ids)} does not fit "
                        f"instance_len {self.instance_len}")
                row = np.full(self.instance_len, PAD_ID, dtype=np.int64)
                row[0] = CLS_ID
                row[1:1 + len(ids)] = ids
                row[1 + len(ids)] = SEP_ID
                mask = np.zeros(self.instance_len, dtype=bool)
                mask[:len(ids) + 2] = True
                ids_rows.append(row)
                mask_rows.append(mask)
                h_pos.append(1 + h_open)
                t_pos.append(1 + t_open)
        return (np.stack(ids_rows), np.stack(mask_rows),
                np.asarray(h_pos), np.asarray(t_pos), counts)

    def encode_instances(self, bags: Sequence[Bag], train_mode: bool = False,
                         rng: Optional[np.random.Generator] = None
                         ) -> tuple[Tensor, list[int]]:
        """(total_instances, 2d) encodings: hidden states at <h> and <t> concatenated."""
        ids, mask, h_pos, t_pos, counts = self._instance_arrays(bags)
        total, L = ids.shape
        d = self.enc_config.hidden_dim
        z = encode_tokens(ids, mask, self.enc_params, self.enc_config,
                          train_mode=train_mode, rng=rng)
        flat = ad.reshape(z, (total * L, d))
        base = np.arange(total) * L
        heads_z = ad.gather_rows(flat, base + h_pos)
        tails_z = ad.gather_rows(flat, base + t_pos)
        return ad.concat([heads_z, tails_z], axis=1), counts

    def forward_bags(self, bags: Sequence[Bag], passage_seeds: Sequence[int] = (),
                     train_mode: bool = False,
                     rng: Optional[np.random.Generator] = None) -> tuple[Tensor, list]:
        """Confidences (B, N); baselines use every instance, so seeds are unused."""
        enc, counts = self.encode_instances(bags, train_mode=train_mode, rng=rng)
        offset = 0
        rows, atts = [], []
        for n in counts:
            inst_enc = ad.gather_rows(enc, np.arange(offset, offset + n))
            conf, att = H.intra_bag_forward(inst_enc, self.head)
            rows.append(ad.reshape(conf, (1, self.inventory.n_relations)))
            atts.append(att.data.copy() if isinstance(att, Tensor) else att)
            offset += n
        return ad.concat(rows, axis=0), atts

    def confidences(self, bags: Sequence[Bag], eval_seed: int = EVAL_SEED,
                    batch_size: int = 32) -> np.ndarray:
        rows = []
        with ad.no_grad():
            for i in range(0, len(bags), batch_size):
                conf, _ = self.forward_bags(bags[i:i + batch_size])
                rows.append(conf.data.copy())
        return np.concatenate(rows) if rows else np.zeros((0, self.inventory.n_relations))

    def triple_confidence(self, bag: Bag,
                          eval_seed: int = EVAL_SEED) -> tuple[H.TripleConfidence, None]:
        with ad.no_grad():
            conf, atts = self.forward_bags([bag])
        return H.TripleConfidence(bag_key=bag.key,
                                  confidences=conf.data[0].copy(),
                                  attention=np.asarray(atts[0])), None


def instance_len_for(bags: Sequence[Bag], cap: int) -> int:
    """Smallest fixed instance length covering every bag, capped at L_max."""
    longest = max(encoded_length(inst) for bag in bags for inst in bag.instances)
    return min(longest + 2, cap)
