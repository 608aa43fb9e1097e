"""Instances, bags, relation inventories and knowledge bases.

Datasets are UTF-8 line-delimited JSON, one instance per line:

    {"tokens": [...], "h": {"id": ..., "name": ..., "span": [s, e]},
     "t": {...}, "relation": "...", "lang": "en"}

Spans are token-index half-open intervals. The relation inventory file has
one relation name per line, the first line being the NA name. Type maps are
``entity_id<TAB>type`` lines. All loaded structures are immutable by
convention and safe for concurrent reads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence


class DatasetError(ValueError):
    """Malformed or inconsistent dataset input."""


@dataclass(frozen=True)
class Mention:
    entity_id: str
    surface: str
    span: tuple[int, int]  # [start, end) token indices


@dataclass(frozen=True)
class Instance:
    """One sentence mentioning an ordered entity pair."""

    text_tokens: tuple[str, ...]
    head: Mention
    tail: Mention
    source_label: str
    language: str | None = None

    def validate(self):
        n = len(self.text_tokens)
        for name, m in (("head", self.head), ("tail", self.tail)):
            s, e = m.span
            if not (0 <= s < e <= n):
                raise DatasetError(f"{name} span [{s},{e}) out of range for {n} tokens")
            joined = " ".join(self.text_tokens[s:e])
            if joined != m.surface:
                raise DatasetError(
                    f"{name} surface {m.surface!r} does not match span tokens {joined!r}")
        hs, he = self.head.span
        ts, te = self.tail.span
        if hs < te and ts < he:
            raise DatasetError(f"head span [{hs},{he}) overlaps tail span [{ts},{te})")


@dataclass(frozen=True)
class Bag:
    """All instances for one ordered entity pair plus its gold relation ids."""

    key: tuple[str, str]
    instances: tuple[Instance, ...]
    gold_relations: frozenset[int]

    @property
    def is_na(self) -> bool:
        return len(self.gold_relations) == 0


class RelationInventory:
    """Ordered relation names with a designated NA name.

    Non-NA relations get ids 0..N-1 in list order; NA has no id.
    """

    def __init__(self, names: Sequence[str], na_name: str):
        if len(set(names)) != len(names):
            raise DatasetError("relation names are not unique")
        if na_name not in names:
            raise DatasetError(f"NA name {na_name!r} missing from inventory")
        self.names = list(names)
        self.na_name = na_name
        self.non_na = [n for n in self.names if n != na_name]
        self._ids = {n: i for i, n in enumerate(self.non_na)}

    @property
    def n_relations(self) -> int:
        return len(self.non_na)

    def relation_id(self, name: str) -> int | None:
        """Id of a non-NA relation; None for the NA name."""
        if name == self.na_name:
            return None
        if name not in self._ids:
            raise DatasetError(f"unknown relation {name!r}")
        return self._ids[name]

    def relation_name(self, rid: int) -> str:
        return self.non_na[rid]

    def __contains__(self, name: str) -> bool:
        return name in self._ids or name == self.na_name


@dataclass
class KnowledgeBase:
    """Directed (head, relation_id, tail) triples plus optional entity types."""

    triples: frozenset[tuple[str, int, str]]
    entity_types: dict[str, str] = field(default_factory=dict)

    def pairs(self) -> frozenset[tuple[str, str]]:
        return frozenset((h, t) for h, _, t in self.triples)

    def has_pair(self, head: str, tail: str) -> bool:
        return (head, tail) in self.pairs()


# ---------------------------------------------------------------------------
# loading / saving
# ---------------------------------------------------------------------------


def _instance_from_record(rec: dict) -> Instance:
    tokens = tuple(rec["tokens"])
    h = Mention(str(rec["h"]["id"]), str(rec["h"]["name"]), tuple(rec["h"]["span"]))
    t = Mention(str(rec["t"]["id"]), str(rec["t"]["name"]), tuple(rec["t"]["span"]))
    return Instance(text_tokens=tokens, head=h, tail=t,
                    source_label=str(rec["relation"]), language=rec.get("lang"))


def _instance_to_record(inst: Instance) -> dict:
    rec = {
        "tokens": list(inst.text_tokens),
        "h": {"id": inst.head.entity_id, "name": inst.head.surface,
              "span": list(inst.head.span)},
        "t": {"id": inst.tail.entity_id, "name": inst.tail.surface,
              "span": list(inst.tail.span)},
        "relation": inst.source_label,
    }
    if inst.language is not None:
        rec["lang"] = inst.language
    return rec


def load_dataset(path: str | Path, inventory: RelationInventory) -> list[Instance]:
    """Load instances, validating spans and relation names per line."""
    out: list[Instance] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                inst = _instance_from_record(rec)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed record ({exc})") from exc
            try:
                inst.validate()
                if inst.source_label not in inventory:
                    raise DatasetError(f"unknown relation {inst.source_label!r}")
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            out.append(inst)
    return out


def save_dataset(instances: Iterable[Instance], path: str | Path):
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(_instance_to_record(inst), ensure_ascii=False) + "\n")


def load_inventory(path: str | Path) -> RelationInventory:
    names = [ln.strip() for ln in open(path, encoding="utf-8") if ln.strip()]
    if not names:
        raise DatasetError(f"{path}: empty relation inventory")
    return RelationInventory(names, na_name=names[0])


def save_inventory(inventory: RelationInventory, path: str | Path):
    ordered = [inventory.na_name] + [n for n in inventory.names if n != inventory.na_name]
    Path(path).write_text("\n".join(ordered) + "\n", encoding="utf-8")


def load_type_map(path: str | Path) -> dict[str, str]:
    types: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DatasetError(f"{path}:{lineno}: expected 'entity_id<TAB>type'")
            types[parts[0]] = parts[1]
    return types


def save_type_map(types: dict[str, str], path: str | Path):
    with open(path, "w", encoding="utf-8") as fh:
        for eid in sorted(types):
            fh.write(f"{eid}\t{types[eid]}\n")


# ---------------------------------------------------------------------------
# grouping and KB construction
# ---------------------------------------------------------------------------


def group_bags(instances: Sequence[Instance], inventory: RelationInventory) -> list[Bag]:
    """Group instances into bags keyed by the ordered entity pair.

    A bag's gold set is the union of its instances' non-NA labels; bags appear
    in first-appearance order and keep within-bag file order. Duplicate
    identical sentences are preserved.
    """
    order: list[tuple[str, str]] = []
    members: dict[tuple[str, str], list[Instance]] = {}
    gold: dict[tuple[str, str], set[int]] = {}
    for inst in instances:
        key = (inst.head.entity_id, inst.tail.entity_id)
        if key not in members:
            order.append(key)
            members[key] = []
            gold[key] = set()
        members[key].append(inst)
        rid = inventory.relation_id(inst.source_label)
        if rid is not None:
            gold[key].add(rid)
    return [Bag(key=key, instances=tuple(members[key]),
                gold_relations=frozenset(gold[key])) for key in order]


def build_kb(bags: Iterable[Bag], entity_types: dict[str, str] | None = None) -> KnowledgeBase:
    """Expand bag gold sets into a triple set; NA bags contribute nothing."""
    triples = set()
    for bag in bags:
        h, t = bag.key
        for rid in bag.gold_relations:
            triples.add((h, rid, t))
    return KnowledgeBase(triples=frozenset(triples),
                         entity_types=dict(entity_types or {}))
