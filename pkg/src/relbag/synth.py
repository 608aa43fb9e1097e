"""Deterministic synthetic corpus generator for desk-scale experiments.

Entities are single-token surfaces (the entity id itself), sentences are
template realizations, and every positive bag is guaranteed at least one
expressing instance per gold relation; distractor instances provide a
controllable noise floor. Each instance records which template produced it
(written to a sidecar file), which makes ground-truth attention diagnostics
possible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import (Bag, Instance, KnowledgeBase, Mention, RelationInventory,
                   save_dataset, save_inventory, save_type_map)

NA_NAME = "NA"

DEFAULT_TYPES = {"person": 40, "org": 40, "place": 40, "work": 40}

DEFAULT_RELATIONS = [
    ("works_at", "person", "org"),
    ("founded", "person", "org"),
    ("born_in", "person", "place"),
    ("based_in", "org", "place"),
    ("wrote", "person", "work"),
    ("reviewed", "org", "work"),
]

DEFAULT_TEMPLATES = {
    "works_at": [
        ["{h}", "works", "at", "{t}", "these", "days", "."],
        ["{t}", "recently", "hired", "{h}", "."],
        ["{h}", "joined", "the", "staff", "of", "{t}", "."],
    ],
    "founded": [
        ["{h}", "founded", "{t}", "years", "ago", "."],
        ["{t}", "was", "started", "by", "{h}", "."],
    ],
    "born_in": [
        ["{h}", "was", "born", "in", "{t}", "."],
        ["records", "show", "{h}", "comes", "from", "{t}", "."],
    ],
    "based_in": [
        ["{h}", "is", "headquartered", "in", "{t}", "."],
        ["{h}", "operates", "mainly", "out", "of", "{t}", "."],
    ],
    "wrote": [
        ["{h}", "wrote", "{t}", "last", "year", "."],
        ["{t}", "was", "written", "by", "{h}", "."],
    ],
    "reviewed": [
        ["{h}", "gave", "{t}", "a", "glowing", "review", "."],
        ["critics", "at", "{h}", "praised", "{t}", "."],
    ],
}

DEFAULT_DISTRACTORS = [
    ["{h}", "and", "{t}", "appeared", "in", "the", "same", "article", "."],
    ["a", "photo", "shows", "{h}", "near", "{t}", "."],
    ["{h}", "was", "mentioned", "alongside", "{t}", "yesterday", "."],
    ["nothing", "links", "{h}", "and", "{t}", "according", "to", "sources", "."],
]


@dataclass
class SynthSpec:
    entities_per_type: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_TYPES))
    relations: list[tuple[str, str, str]] = field(
        default_factory=lambda: list(DEFAULT_RELATIONS))
    templates: dict[str, list[list[str]]] = field(
        default_factory=lambda: {k: [list(t) for t in v] for k, v in DEFAULT_TEMPLATES.items()})
    distractor_templates: list[list[str]] = field(
        default_factory=lambda: [list(t) for t in DEFAULT_DISTRACTORS])
    n_bags: int = 600
    na_bag_fraction: float = 0.5
    bag_size: tuple[int, int] = (2, 6)
    noise_rate: float = 0.3
    second_relation_prob: float = 0.3
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 7

    def validate(self):
        if not (0.0 <= self.noise_rate < 1.0):
            raise ValueError(f"noise_rate must be in [0, 1), got {self.noise_rate}")
        if not (0.0 <= self.na_bag_fraction <= 1.0):
            raise ValueError("na_bag_fraction must be in [0, 1]")
        if self.bag_size[0] < 1 or self.bag_size[0] > self.bag_size[1]:
            raise ValueError(f"bad bag_size {self.bag_size}")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError("split_fractions must sum to 1")
        for name, _, _ in self.relations:
            if not self.templates.get(name):
                raise ValueError(f"relation {name!r} has no template")
        for _, ht, tt in self.relations:
            for ty in (ht, tt):
                if ty not in self.entities_per_type:
                    raise ValueError(f"relation uses unknown entity type {ty!r}")

    def to_dict(self) -> dict:
        return {
            "entities_per_type": self.entities_per_type,
            "relations": [list(r) for r in self.relations],
            "templates": self.templates,
            "distractor_templates": self.distractor_templates,
            "n_bags": self.n_bags,
            "na_bag_fraction": self.na_bag_fraction,
            "bag_size": list(self.bag_size),
            "noise_rate": self.noise_rate,
            "second_relation_prob": self.second_relation_prob,
            "split_fractions": list(self.split_fractions),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        kw = dict(d)
        if "relations" in kw:
            kw["relations"] = [tuple(r) for r in kw["relations"]]
        if "bag_size" in kw:
            kw["bag_size"] = tuple(kw["bag_size"])
        if "split_fractions" in kw:
            kw["split_fractions"] = tuple(kw["split_fractions"])
        return cls(**kw)


@dataclass
class SynthCorpus:
    splits: dict[str, list[Bag]]
    template_tags: dict[str, list[str]]  # per split, one tag per serialized line
    kb: KnowledgeBase
    entity_types: dict[str, str]
    inventory: RelationInventory
    spec: SynthSpec

    def all_bags(self) -> list[Bag]:
        return [b for split in ("train", "dev", "test") for b in self.splits[split]]


def _realize(template: Sequence[str], head_id: str, tail_id: str,
             label: str) -> Instance:
    tokens = []
    h_span = t_span = None
    for tok in template:
        if tok == "{h}":
            h_span = (len(tokens), len(tokens) + 1)
            tokens.append(head_id)
        elif tok == "{t}":
            t_span = (len(tokens), len(tokens) + 1)
            tokens.append(tail_id)
        else:
            tokens.append(tok)
    if h_span is None or t_span is None:
        raise ValueError(f"template {template} lacks a placeholder")
    return Instance(text_tokens=tuple(tokens),
                    head=Mention(head_id, head_id, h_span),
                    tail=Mention(tail_id, tail_id, t_span),
                    source_label=label)


def generate(spec: SynthSpec) -> SynthCorpus:
    """Generate {train, dev, test} bags, the ground-truth KB and the type map."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)

    entities: dict[str, list[str]] = {}
    entity_types: dict[str, str] = {}
    for ty in sorted(spec.entities_per_type):
        count = spec.entities_per_type[ty]
        ids = [f"{ty}_{i:03d}" for i in range(count)]
        entities[ty] = ids
        for eid in ids:
            entity_types[eid] = ty

    rel_names = [r[0] for r in spec.relations]
    inventory = RelationInventory([NA_NAME] + rel_names, na_name=NA_NAME)
    by_signature: dict[tuple[str, str], list[str]] = {}
    signature: dict[str, tuple[str, str]] = {}
    for name, ht, tt in spec.relations:
        by_signature.setdefault((ht, tt), []).append(name)
        signature[name] = (ht, tt)

    n_na = int(round(spec.n_bags * spec.na_bag_fraction))
    n_pos = spec.n_bags - n_na

    used_pairs: set[tuple[str, str]] = set()
    pos_pairs: list[tuple[tuple[str, str], list[str]]] = []  # (pair, gold names)
    attempts = 0
    while len(pos_pairs) < n_pos:
        attempts += 1
        if attempts > 100 * max(1, n_pos):
            raise ValueError("infeasible spec: cannot sample enough distinct positive pairs")
        rel = rel_names[int(rng.integers(len(rel_names)))]
        ht, tt = signature[rel]
        head = entities[ht][int(rng.integers(len(entities[ht])))]
        tail = entities[tt][int(rng.integers(len(entities[tt])))]
        if head == tail or (head, tail) in used_pairs:
            continue
        used_pairs.add((head, tail))
        gold = [rel]
        siblings = [r for r in by_signature[(ht, tt)] if r != rel]
        if siblings and rng.random() < spec.second_relation_prob:
            gold.append(siblings[int(rng.integers(len(siblings)))])
        pos_pairs.append(((head, tail), gold))

    na_pairs: list[tuple[str, str]] = []
    attempts = 0
    while len(na_pairs) < n_na:
        attempts += 1
        if attempts > 100 * max(1, n_na):
            raise ValueError("infeasible spec: cannot sample enough distinct NA pairs")
        ht, tt = list(by_signature)[int(rng.integers(len(by_signature)))]
        head = entities[ht][int(rng.integers(len(entities[ht])))]
        tail = entities[tt][int(rng.integers(len(entities[tt])))]
        if head == tail or (head, tail) in used_pairs:
            continue
        used_pairs.add((head, tail))
        na_pairs.append((head, tail))

    def build_positive_bag(pair, gold_names) -> tuple[Bag, list[str]]:
        head, tail = pair
        size = int(rng.integers(spec.bag_size[0], spec.bag_size[1] + 1))
        distractors = int(spec.noise_rate * size)
        while size - distractors < len(gold_names):
            size += 1
            distractors = int(spec.noise_rate * size)
        slots: list[str] = list(gold_names)
        while len(slots) < size - distractors:
            slots.append(gold_names[int(rng.integers(len(gold_names)))])
        slots.extend(["__distractor__"] * distractors)
        slots = [slots[i] for i in rng.permutation(len(slots))]
        instances, tags = [], []
        for slot in slots:
            if slot == "__distractor__":
                ti = int(rng.integers(len(spec.distractor_templates)))
                instances.append(_realize(spec.distractor_templates[ti], head, tail, NA_NAME))
                tags.append(f"distractor/{ti}")
            else:
                ti = int(rng.integers(len(spec.templates[slot])))
                instances.append(_realize(spec.templates[slot][ti], head, tail, slot))
                tags.append(f"{slot}/{ti}")
        gold_ids = frozenset(inventory.relation_id(n) for n in gold_names)
        return Bag(key=pair, instances=tuple(instances), gold_relations=gold_ids), tags

    def build_na_bag(pair) -> tuple[Bag, list[str]]:
        head, tail = pair
        size = int(rng.integers(spec.bag_size[0], spec.bag_size[1] + 1))
        instances, tags = [], []
        for _ in range(size):
            ti = int(rng.integers(len(spec.distractor_templates)))
            instances.append(_realize(spec.distractor_templates[ti], head, tail, NA_NAME))
            tags.append(f"distractor/{ti}")
        return Bag(key=pair, instances=tuple(instances), gold_relations=frozenset()), tags

    pos_bags = [build_positive_bag(pair, gold) for pair, gold in pos_pairs]
    na_bags = [build_na_bag(pair) for pair in na_pairs]

    def split_three(items: list) -> tuple[list, list, list]:
        order = rng.permutation(len(items))
        shuffled = [items[i] for i in order]
        n = len(items)
        n_train = int(round(spec.split_fractions[0] * n))
        n_dev = int(round(spec.split_fractions[1] * n))
        return (shuffled[:n_train], shuffled[n_train:n_train + n_dev],
                shuffled[n_train + n_dev:])

    pos_split = split_three(pos_bags)
    na_split = split_three(na_bags)

    splits: dict[str, list[Bag]] = {}
    tags: dict[str, list[str]] = {}
    for name, pos, na in zip(("train", "dev", "test"), pos_split, na_split):
        merged = pos + na
        order = rng.permutation(len(merged))
        bags = [merged[i][0] for i in order]
        splits[name] = bags
        tags[name] = [t for i in order for t in merged[i][1]]

    triples = set()
    for pair, gold_names in pos_pairs:
        for rel in gold_names:
            triples.add((pair[0], inventory.relation_id(rel), pair[1]))
    kb = KnowledgeBase(triples=frozenset(triples), entity_types=entity_types)
    return SynthCorpus(splits=splits, template_tags=tags, kb=kb,
                       entity_types=entity_types, inventory=inventory, spec=spec)


def write_corpus(corpus: SynthCorpus, out_dir: str | Path):
    """Emit the dataset files, inventory, type map, template sidecar and summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split, bags in corpus.splits.items():
        save_dataset((inst for bag in bags for inst in bag.instances),
                     out / f"{split}.jsonl")
    save_inventory(corpus.inventory, out / "relations.txt")
    save_type_map(corpus.entity_types, out / "entity_types.tsv")
    with open(out / "template_tags.jsonl", "w", encoding="utf-8") as fh:
        for split in ("train", "dev", "test"):
            for line, tag in enumerate(corpus.template_tags[split], start=1):
                fh.write(json.dumps({"split": split, "line": line, "template": tag}) + "\n")
    summary = {
        "spec": corpus.spec.to_dict(),
        "n_bags": {s: len(b) for s, b in corpus.splits.items()},
        "n_na_bags": {s: sum(1 for bag in b if bag.is_na) for s, b in corpus.splits.items()},
        "n_instances": {s: sum(len(bag.instances) for bag in b)
                        for s, b in corpus.splits.items()},
        "n_kb_triples": len(corpus.kb.triples),
    }
    (out / "corpus_summary.json").write_text(json.dumps(summary, indent=2) + "\n",
                                             encoding="utf-8")
