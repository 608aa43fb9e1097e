"""Model diagnostics: entity permutation, PAD-attention mass, length bins.

The permutation test swaps one entity per non-NA bag for a type-matched
entity whose pair never occurs in the combined knowledge base, rewriting
every instance; gold labels are untouched, so any score drop reflects
memorization rather than semantics. PAD-attention statistics measure how
much attention relation queries put on padding, split by whether the
relation actually holds. Length bins recompute AUC within quantile bins of
the untruncated passage length.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import metrics as M
from .data import Bag, Instance, KnowledgeBase, Mention
from .passage import PAD_ID, derive_seed, pre_truncation_count


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------------------
# entity permutation test
# ---------------------------------------------------------------------------


@dataclass
class PermutationRecord:
    bag_key: tuple[str, str]
    slot: str                 # "head" or "tail"
    original: str
    replacement: str
    replacement_surface: str


@dataclass
class PermutationPlan:
    seed: int
    records: list[PermutationRecord] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def save(self, path: str | Path):
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps({
                    "bag_key": list(r.bag_key), "slot": r.slot, "original": r.original,
                    "replacement": r.replacement,
                    "replacement_surface": r.replacement_surface}) + "\n")
            for key in self.skipped:
                fh.write(json.dumps({"bag_key": list(key), "skipped": True}) + "\n")


def _rewrite_mention(inst: Instance, slot: str, new_id: str,
                     new_surface_tokens: list[str]) -> Instance:
    """Replace one entity's tokens and id, shifting the other span as needed."""
    target = inst.head if slot == "head" else inst.tail
    other = inst.tail if slot == "head" else inst.head
    s, e = target.span
    tokens = list(inst.text_tokens)
    tokens[s:e] = new_surface_tokens
    delta = len(new_surface_tokens) - (e - s)
    new_target = Mention(new_id, " ".join(new_surface_tokens), (s, s + len(new_surface_tokens)))
    os_, oe = other.span
    if os_ >= e:
        other = Mention(other.entity_id, other.surface, (os_ + delta, oe + delta))
    head, tail = ((new_target, other) if slot == "head" else (other, new_target))
    return Instance(text_tokens=tuple(tokens), head=head, tail=tail,
                    source_label=inst.source_label, language=inst.language)


def permute_entities(test_bags: Sequence[Bag],
                     combined_kb: KnowledgeBase,
                     seed: int,
                     surfaces: dict[str, list[str]] | None = None
                     ) -> tuple[list[Bag], PermutationPlan]:
    """Build the permuted split: one type-consistent replacement per non-NA bag.

    The replacement is drawn uniformly among (slot, entity) candidates whose
    resulting pair is absent from ``combined_kb``; NA bags are copied
    verbatim. ``surfaces`` maps entity ids to replacement token lists and
    defaults to the id as a single token. Bags with no legal candidate are
    skipped (kept out of the output) and reported in the plan.
    """
    types = combined_kb.entity_types
    if not types:
        raise AnalysisError("permute_entities requires entity types in the KB")
    by_type: dict[str, list[str]] = {}
    for eid in sorted(types):
        by_type.setdefault(types[eid], []).append(eid)
    kb_pairs = combined_kb.pairs()
    rng = np.random.default_rng(seed)

    def surface_of(eid: str) -> list[str]:
        if surfaces and eid in surfaces:
            return list(surfaces[eid])
        return [eid]

    plan = PermutationPlan(seed=seed)
    out: list[Bag] = []
    taken = {bag.key for bag in test_bags if bag.is_na}  # avoid key collisions
    for bag in test_bags:
        if bag.is_na:
            out.append(bag)
            continue
        head, tail = bag.key
        for eid in (head, tail):
            if eid not in types:
                raise AnalysisError(f"entity {eid!r} has no type; permutation needs types")
        candidates: list[tuple[str, str]] = []
        for cand in by_type[types[head]]:
            if (cand != head and cand != tail and (cand, tail) not in kb_pairs
                    and (cand, tail) not in taken):
                candidates.append(("head", cand))
        for cand in by_type[types[tail]]:
            if (cand != tail and cand != head and (head, cand) not in kb_pairs
                    and (head, cand) not in taken):
                candidates.append(("tail", cand))
        if not candidates:
            plan.skipped.append(bag.key)
            continue
        slot, new_id = candidates[int(rng.integers(len(candidates)))]
        new_surface = surface_of(new_id)
        new_key = (new_id, tail) if slot == "head" else (head, new_id)
        taken.add(new_key)
        instances = tuple(_rewrite_mention(inst, slot, new_id, new_surface)
                          for inst in bag.instances)
        out.append(Bag(key=new_key, instances=instances,
                       gold_relations=bag.gold_relations))
        plan.records.append(PermutationRecord(
            bag_key=bag.key, slot=slot, original=head if slot == "head" else tail,
            replacement=new_id, replacement_surface=" ".join(new_surface)))
    return out, plan


# ---------------------------------------------------------------------------
# PAD attention statistics
# ---------------------------------------------------------------------------


@dataclass
class PadAttentionStats:
    avg_pad_mass_positive: float  # percent
    avg_pad_mass_negative: float  # percent
    n_bags_sampled: int
    n_positive_triples: int
    n_negative_triples: int

    def to_dict(self) -> dict:
        return {"avg_pad_mass_positive": self.avg_pad_mass_positive,
                "avg_pad_mass_negative": self.avg_pad_mass_negative,
                "n_bags_sampled": self.n_bags_sampled,
                "n_positive_triples": self.n_positive_triples,
                "n_negative_triples": self.n_negative_triples}


def _labels_correct(row: np.ndarray, gold: frozenset[int], threshold: float) -> bool:
    predicted = {i for i, c in enumerate(row) if c > threshold}
    return predicted == set(gold)


def pad_attention_stats(model, bags: Sequence[Bag], sample_n: int, seed: int,
                        threshold: float = 0.5,
                        eval_seed: int = 0) -> PadAttentionStats:
    """Average percent of attention mass on PAD, split by triple polarity.

    Only non-NA bags the model labels exactly right at ``threshold`` qualify.
    Raw per-triple percentages are summed over gold relations (positives) and
    over the rest (negatives), then divided by the respective triple counts.
    """
    if not getattr(model, "attend_pad", False):
        raise AnalysisError("pad_attention_stats requires a model with attend_pad=true")
    non_na = [b for b in bags if not b.is_na]
    conf = model.confidences(non_na, eval_seed=eval_seed)
    qualifying = [b for b, row in zip(non_na, conf)
                  if _labels_correct(row, b.gold_relations, threshold)]
    rng = np.random.default_rng(seed)
    if len(qualifying) > sample_n:
        idx = rng.choice(len(qualifying), size=sample_n, replace=False)
        sampled = [qualifying[i] for i in sorted(idx)]
    else:
        sampled = qualifying

    pos_sum = neg_sum = 0.0
    n_pos = n_neg = 0
    for bag in sampled:
        tc, passage = model.triple_confidence(bag, eval_seed=eval_seed)
        pad_positions = ~passage.attn_mask
        pad_mass = tc.attention[:, pad_positions].sum(axis=1) * 100.0
        for rid in range(model.inventory.n_relations):
            if rid in bag.gold_relations:
                pos_sum += float(pad_mass[rid])
                n_pos += 1
            else:
                neg_sum += float(pad_mass[rid])
                n_neg += 1
    return PadAttentionStats(
        avg_pad_mass_positive=pos_sum / n_pos if n_pos else 0.0,
        avg_pad_mass_negative=neg_sum / n_neg if n_neg else 0.0,
        n_bags_sampled=len(sampled), n_positive_triples=n_pos,
        n_negative_triples=n_neg)


# ---------------------------------------------------------------------------
# passage-length bins
# ---------------------------------------------------------------------------


@dataclass
class LengthBin:
    lo: int
    hi: int
    n_bags: int
    n_positives: int
    auc: float | None

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "n_bags": self.n_bags,
                "n_positives": self.n_positives, "auc": self.auc}


def length_bins(model, bags: Sequence[Bag], num_bins: int = 7,
                eval_seed: int = 0) -> list[LengthBin]:
    """Per-bin AUC over equal-count quantile bins of untruncated passage length.

    Bins partition the non-NA bags; every NA bag joins each bin as ranking
    negatives. A bin without gold positives reports AUC as None.
    """
    if num_bins < 1:
        raise AnalysisError("num_bins must be >= 1")
    non_na = [b for b in bags if not b.is_na]
    na = [b for b in bags if b.is_na]
    if not non_na:
        raise AnalysisError("length_bins needs at least one non-NA bag")
    lengths = np.array([pre_truncation_count(b) for b in non_na])
    order = np.argsort(lengths, kind="stable")
    groups = np.array_split(order, num_bins)

    out = []
    for group in groups:
        members = [non_na[i] for i in group]
        if not members:
            out.append(LengthBin(lo=0, hi=0, n_bags=0, n_positives=0, auc=None))
            continue
        lo = int(min(lengths[i] for i in group))
        hi = int(max(lengths[i] for i in group))
        subset = members + na
        rt = M.rank_triples(model, subset, eval_seed=eval_seed)
        n_pos = rt.total_gold_positives
        bin_auc = M.auc(M.pr_curve(rt)) if n_pos > 0 else None
        out.append(LengthBin(lo=lo, hi=hi, n_bags=len(members),
                             n_positives=n_pos, auc=bin_auc))
    return out


def write_bins_csv(bins: Sequence[LengthBin], path: str | Path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("lo,hi,n_bags,n_positives,auc\n")
        for b in bins:
            auc_s = f"{b.auc:.10g}" if b.auc is not None else ""
            fh.write(f"{b.lo},{b.hi},{b.n_bags},{b.n_positives},{auc_s}\n")
