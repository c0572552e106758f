"""Ranking metrics for generated distractors against the gold set.

A candidate matches gold when the two strings agree after trimming and
case-folding. Relevance is binary; NDCG discounts rank ``i`` (1-based) by
``log2(i + 1)`` and normalises by the ideal ranking of ``min(|gold|, k)``
hits. Corpus figures are unweighted means over items.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import norm

METRIC_NAMES = ("P@1", "F1@3", "F1@10", "MRR@10", "NDCG@10")


@dataclass(frozen=True)
class EvalCase:
    item_id: str
    ranked: tuple[str, ...]
    gold: frozenset[str]

    def __init__(self, item_id: str, ranked: Sequence[str], gold: Iterable[str]):
        object.__setattr__(self, "item_id", item_id)
        object.__setattr__(self, "ranked", tuple(ranked))
        object.__setattr__(self, "gold", frozenset(norm(g) for g in gold))
        if not self.gold:
            raise ValueError(f"item {item_id!r}: empty gold set")
        keys = [norm(r) for r in self.ranked]
        if len(set(keys)) != len(keys):
            raise ValueError(f"item {item_id!r}: duplicate ranked surfaces")

    def relevance(self, k: int | None = None) -> list[int]:
        ranked = self.ranked if k is None else self.ranked[:k]
        return [int(norm(r) in self.gold) for r in ranked]


def p_at_1(case: EvalCase) -> float:
    rel = case.relevance(1)
    return float(rel[0]) if rel else 0.0


def f1_at_k(case: EvalCase, k: int) -> float:
    hits = sum(case.relevance(k))
    if hits == 0:
        return 0.0
    precision = hits / k
    recall = hits / len(case.gold)
    return 2 * precision * recall / (precision + recall)


def mrr_at_k(case: EvalCase, k: int = 10) -> float:
    for i, r in enumerate(case.relevance(k), 1):
        if r:
            return 1.0 / i
    return 0.0


def dcg(rel: Sequence[int]) -> float:
    return sum(r / math.log2(i + 1) for i, r in enumerate(rel, 1))


def ndcg_at_k(case: EvalCase, k: int = 10) -> float:
    ideal = dcg([1] * min(len(case.gold), k))
    return dcg(case.relevance(k)) / ideal


def item_metrics(case: EvalCase) -> dict[str, float]:
    return {
        "P@1": p_at_1(case),
        "F1@3": f1_at_k(case, 3),
        "F1@10": f1_at_k(case, 10),
        "MRR@10": mrr_at_k(case, 10),
        "NDCG@10": ndcg_at_k(case, 10),
    }


@dataclass
class EvalReport:
    per_item: dict[str, dict[str, float]]
    aggregate: dict[str, float] = field(default_factory=dict)

    def scaled(self, scale: str = "x100") -> dict:
        if scale not in ("x100", "fraction"):
            raise ValueError(f"unknown scale {scale!r}")
        f = 100.0 if scale == "x100" else 1.0
        out = {name: self.aggregate[name] * f for name in METRIC_NAMES}
        out["scale"] = scale
        return out

    def to_json(self, scale: str = "x100") -> dict:
        return {"aggregate": self.scaled(scale), "per_item": self.per_item}


def evaluate_corpus(cases: Iterable[EvalCase]) -> EvalReport:
    per_item = {}
    for case in cases:
        if case.item_id in per_item:
            raise ValueError(f"duplicate item id {case.item_id!r}")
        per_item[case.item_id] = item_metrics(case)
    if not per_item:
        raise ValueError("cannot aggregate zero items")
    n = len(per_item)
    aggregate = {name: math.fsum(m[name] for m in per_item.values()) / n for name in METRIC_NAMES}
    return EvalReport(per_item, aggregate)
