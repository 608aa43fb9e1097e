"""Ranked-triple evaluation: PR curve, AUC, P@k, and micro/macro F1.

Every (bag, non-NA relation) pair is scored and the merged list is ranked by
confidence (ties broken by bag key then relation id). A hit at rank k means
the relation is in that bag's gold set. AUC is the trapezoid area over the
per-rank (recall, precision) points with an implicit starting point at recall
zero; micro-F1 is the best F1 along the curve and macro-F1 averages each
class's best F1 on its class-restricted ranking. NA is never ranked.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence


class MetricsError(ValueError):
    """Raised when a metric is undefined for the given ranking."""


@dataclass(frozen=True)
class TripleScore:
    bag_key: tuple[str, str]
    relation_id: int
    confidence: float
    hit: bool


@dataclass
class RankedTriples:
    """Deterministically sorted triple scores for one evaluation split."""

    entries: list[TripleScore]
    total_gold_positives: int

    def __len__(self):
        return len(self.entries)


@dataclass
class MetricsReport:
    auc: float
    p_at_100: float | None
    p_at_200: float | None
    p_at_300: float | None
    p_at_m: float | None
    micro_f1: float
    macro_f1: float
    n_entries: int
    n_positives: int
    pr_points: list[tuple[float, float]] = field(repr=False)  # (precision, recall)

    def to_dict(self) -> dict:
        return {"auc": self.auc, "p_at_100": self.p_at_100, "p_at_200": self.p_at_200,
                "p_at_300": self.p_at_300, "p_at_m": self.p_at_m,
                "micro_f1": self.micro_f1, "macro_f1": self.macro_f1,
                "n_entries": self.n_entries, "n_positives": self.n_positives}

    def to_text(self) -> str:
        """Single structured text record."""
        parts = [f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}"
                 for k, v in self.to_dict().items()]
        return "metrics " + " ".join(parts)


def rank_and_sort(scored: Sequence[tuple[tuple[str, str], int, float, bool]]) -> RankedTriples:
    """Sort raw (bag_key, relation_id, confidence, hit) tuples into a ranking."""
    entries = [TripleScore(*s) for s in scored]
    entries.sort(key=lambda e: (-e.confidence, e.bag_key, e.relation_id))
    total = sum(1 for e in entries if e.hit)
    return RankedTriples(entries=entries, total_gold_positives=total)


def rank_triples(model, bags, eval_seed: int = 0, batch_size: int = 32) -> RankedTriples:
    """Score every (bag, non-NA relation) pair with the model and rank them."""
    conf = model.confidences(bags, eval_seed=eval_seed, batch_size=batch_size)
    scored = []
    for bag, row in zip(bags, conf):
        for rid in range(model.inventory.n_relations):
            scored.append((bag.key, rid, float(row[rid]), rid in bag.gold_relations))
    return rank_and_sort(scored)


def pr_curve(rt: RankedTriples) -> list[tuple[float, float]]:
    """(precision, recall) at every rank; requires at least one gold positive."""
    if rt.total_gold_positives < 1:
        raise MetricsError("no positive triples: PR curve undefined")
    points = []
    hits = 0
    for k, e in enumerate(rt.entries, start=1):
        if e.hit:
            hits += 1
        points.append((hits / k, hits / rt.total_gold_positives))
    return points


def auc(pr_points: Sequence[tuple[float, float]]) -> float:
    """Trapezoid area over (recall, precision), starting at (0, precision@1)."""
    if not pr_points:
        raise MetricsError("auc needs at least one PR point")
    area = 0.0
    prev_p, prev_r = pr_points[0][0], 0.0
    for p, r in pr_points:
        area += (r - prev_r) * (p + prev_p) / 2.0
        prev_p, prev_r = p, r
    return area


def p_at_k(rt: RankedTriples, k: int) -> float:
    if k > len(rt.entries):
        raise MetricsError(f"p@{k} undefined: only {len(rt.entries)} entries")
    if k < 1:
        raise MetricsError(f"p@{k} undefined")
    hits = sum(1 for e in rt.entries[:k] if e.hit)
    return hits / k


def p_at_m(rt: RankedTriples) -> float:
    """Mean of P@100, P@200 and P@300."""
    return (p_at_k(rt, 100) + p_at_k(rt, 200) + p_at_k(rt, 300)) / 3.0


def micro_f1(pr_points: Sequence[tuple[float, float]]) -> float:
    """Best F1 over the curve's operating points."""
    best = 0.0
    for p, r in pr_points:
        if p + r > 0:
            f1 = 2.0 * p * r / (p + r)
            if f1 > best:
                best = f1
    return best


def macro_f1(rt: RankedTriples, n_relations: int) -> float:
    """Mean over classes (with >=1 gold positive) of the class's best F1.

    Each class is evaluated on the sub-ranking of its own entries, which
    inherits the global order.
    """
    per_class = []
    for rid in range(n_relations):
        entries = [e for e in rt.entries if e.relation_id == rid]
        positives = sum(1 for e in entries if e.hit)
        if positives == 0:
            continue
        sub = RankedTriples(entries=entries, total_gold_positives=positives)
        per_class.append(micro_f1(pr_curve(sub)))
    if not per_class:
        raise MetricsError("macro_f1 undefined: no class has a gold positive")
    return sum(per_class) / len(per_class)


def metrics_report(rt: RankedTriples, n_relations: int) -> MetricsReport:
    """Full report; P@k slots are None when the ranking is shorter than k."""
    points = pr_curve(rt)
    n = len(rt.entries)
    p100 = p_at_k(rt, 100) if n >= 100 else None
    p200 = p_at_k(rt, 200) if n >= 200 else None
    p300 = p_at_k(rt, 300) if n >= 300 else None
    pm = (p100 + p200 + p300) / 3.0 if n >= 300 else None
    return MetricsReport(auc=auc(points), p_at_100=p100, p_at_200=p200, p_at_300=p300,
                         p_at_m=pm, micro_f1=micro_f1(points),
                         macro_f1=macro_f1(rt, n_relations),
                         n_entries=n, n_positives=rt.total_gold_positives,
                         pr_points=points)


def evaluate_model(model, bags, eval_seed: int = 0) -> MetricsReport:
    rt = rank_triples(model, bags, eval_seed=eval_seed)
    return metrics_report(rt, model.inventory.n_relations)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def write_pr_csv(pr_points: Sequence[tuple[float, float]], path: str | Path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "precision", "recall"])
        for k, (p, r) in enumerate(pr_points, start=1):
            writer.writerow([k, f"{p:.10g}", f"{r:.10g}"])


def write_report(report: MetricsReport, path: str | Path):
    Path(path).write_text(report.to_text() + "\n", encoding="utf-8")


def write_report_json(report: MetricsReport, path: str | Path):
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_report_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
