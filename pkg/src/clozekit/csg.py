"""Candidate set generation: ask the backend for fillers, drop the answer, keep k."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from ._gate import gated, ordered_map
from .backend import BackendError, Strategy, format_query
from .corpus import ClozeItem, norm

log = logging.getLogger(__name__)

DEFAULT_K = 10
DEFAULT_OVERFETCH = 3


class GenerationError(RuntimeError):
    def __init__(self, item_id: str, cause: Exception):
        self.item_id = item_id
        self.cause = cause
        super().__init__(f"item {item_id!r}: {cause}")


@dataclass(frozen=True)
class Candidate:
    surface: str
    confidence: float

    def to_json(self) -> dict:
        return {"text": self.surface, "confidence": self.confidence}


@dataclass(frozen=True)
class CandidateSet:
    item_id: str
    strategy: Strategy
    candidates: tuple[Candidate, ...]

    @property
    def empty(self) -> bool:
        return not self.candidates

    def to_json(self) -> dict:
        return {
            "id": self.item_id,
            "strategy": Strategy.parse(self.strategy).value,
            "candidates": [c.to_json() for c in self.candidates],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CandidateSet":
        return cls(
            item_id=str(obj["id"]),
            strategy=Strategy.parse(obj["strategy"]),
            candidates=tuple(Candidate(c["text"], float(c["confidence"])) for c in obj["candidates"]),
        )


def _crude_stem(word: str) -> str:
    w = norm(word)
    if w.endswith("ing") and len(w) > 5:
        w = w[:-3]
    elif w.endswith("ed") and len(w) > 4:
        w = w[:-2]
    elif w.endswith("es") and w[:-2].endswith(("s", "x", "z", "ch", "sh")):
        w = w[:-2]
    elif w.endswith("s") and not w.endswith("ss") and len(w) > 3:
        w = w[:-1]
    if len(w) > 3 and w[-1] == w[-2]:
        w = w[:-1]
    return w.rstrip("e") or w


def generate(
    item: ClozeItem,
    backend,
    strategy: Strategy | str = Strategy.ANSWER_RELATING,
    k: int = DEFAULT_K,
    overfetch: int = DEFAULT_OVERFETCH,
    exclude_inflections: bool = False,
) -> CandidateSet:
    if k < 1:
        raise ValueError("k must be >= 1")
    strategy = Strategy.parse(strategy)
    try:
        preds = backend.top_k(format_query(item, strategy), overfetch * k)
    except BackendError as exc:
        raise GenerationError(item.id, exc) from exc

    answer = norm(item.answer)
    answer_stem = _crude_stem(item.answer)
    best: dict[str, Candidate] = {}
    for p in preds:
        key = norm(p.surface)
        if not key or key == answer:
            continue
        if exclude_inflections and _crude_stem(p.surface) == answer_stem:
            continue
        prev = best.get(key)
        if prev is None or (p.probability, prev.surface) > (prev.confidence, p.surface):
            best[key] = Candidate(p.surface.strip(), p.probability)

    ranked = sorted(best.values(), key=lambda c: (-c.confidence, c.surface))[:k]
    if not ranked:
        log.warning("item %s: no candidates survived filtering", item.id)
    return CandidateSet(item.id, strategy, tuple(ranked))


@dataclass
class BatchResult:
    sets: list[CandidateSet] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)


def generate_batch(items, backend, strategy=Strategy.ANSWER_RELATING, k: int = DEFAULT_K,
                   jobs: int = 1, **kwargs) -> BatchResult:
    """Generate for every item; failures are collected, not raised."""
    backend = gated(backend)

    def one(item):
        try:
            return generate(item, backend, strategy, k, **kwargs)
        except GenerationError as exc:
            return exc

    result = BatchResult()
    for out in ordered_map(one, items, jobs):
        if isinstance(out, GenerationError):
            result.errors.append((out.item_id, str(out.cause)))
        else:
            result.sets.append(out)
    return result
