"""Masked-LM backend contract, the deterministic table stub, and the adapter registry.

A backend answers three questions about a masked query: which whole words
fill the mask (``top_k``), how surprised it is by a given filler (``loss``),
and how to produce a new backend trained toward given fillers
(``fine_tune``).

Stub table file
---------------
::

    {
      "format": "clozekit-stub",
      "version": 1,
      "max_input_length": 64,
      "fallback": {"naive": {"word": p, ...}, "answer": {...}},
      "entries": [
        {"query": "<query key>", "strategy": "naive" | "answer",
         "predictions": {"word": p, ...}}
      ]
    }

``query`` is :func:`query_key` of the formatted query: contexts joined around
``[MASK]``, followed by ``[SEP] <answer>`` for the answer-relating strategy,
whitespace collapsed and lower-cased. Each distribution holds probabilities in
(0, 1] summing to at most 1. Queries without an entry use the ``fallback``
distribution of their strategy (empty when absent).

Stub fine-tuning merges training targets into the table: for each query with
``n`` instances, of which ``c_w`` target word ``w``,
``p'(w) = (1 - merge_weight) * p(w) + merge_weight * c_w / n``
where ``p`` is the current entry (or fallback). With the default
``merge_weight`` of 0.9 the trained targets dominate that query.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Protocol, runtime_checkable

from .corpus import BLANK

STUB_FORMAT = "clozekit-stub"
STUB_VERSION = 1


class Strategy(str, Enum):
    NAIVE = "naive"
    ANSWER_RELATING = "answer"

    @classmethod
    def parse(cls, value: "str | Strategy") -> "Strategy":
        if isinstance(value, Strategy):
            return value
        aliases = {"naive": cls.NAIVE, "answer": cls.ANSWER_RELATING,
                   "answer-relating": cls.ANSWER_RELATING, "answer_relating": cls.ANSWER_RELATING}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown strategy {value!r}") from None


class BackendError(RuntimeError):
    pass


class TransportError(BackendError):
    """The backend could not be reached or loaded."""


class InputTooLongError(BackendError):
    def __init__(self, item_id, length, limit):
        self.item_id = item_id
        super().__init__(f"item {item_id!r}: input of {length} tokens exceeds limit {limit}")


class OutOfVocabularyError(BackendError):
    def __init__(self, surface):
        self.surface = surface
        super().__init__(f"target {surface!r} is outside the backend vocabulary")


class CapabilityError(BackendError):
    """Requested operation is not supported by this adapter."""


@dataclass(frozen=True)
class MaskQuery:
    left_context: str
    right_context: str
    answer_hint: str | None
    strategy: Strategy
    item_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        if (self.answer_hint is not None) != (self.strategy is Strategy.ANSWER_RELATING):
            raise ValueError("answer_hint must be set exactly for the answer-relating strategy")

    def render(self, mask: str = "[MASK]", sep: str = "[SEP]") -> str:
        text = " ".join(f"{self.left_context} {mask} {self.right_context}".split())
        if self.answer_hint is not None:
            text += f" {sep} {self.answer_hint.strip()}"
        return text


def query_key(query: MaskQuery) -> str:
    return query.render().lower()


def format_query(item, strategy: "Strategy | str") -> MaskQuery:
    """Split the stem at the blank; attach the answer for answer-relating input."""
    strategy = Strategy.parse(strategy)
    left, right = item.stem.split(BLANK, 1)
    hint = item.answer if strategy is Strategy.ANSWER_RELATING else None
    return MaskQuery(left, right, hint, strategy, getattr(item, "id", None))


@dataclass(frozen=True)
class Prediction:
    surface: str
    probability: float

    def __post_init__(self):
        if not self.surface:
            raise ValueError("empty prediction surface")
        if not 0.0 < self.probability <= 1.0:
            raise ValueError(f"probability {self.probability} outside (0, 1]")


def order_predictions(preds: Iterable[Prediction]) -> list[Prediction]:
    return sorted(preds, key=lambda p: (-p.probability, p.surface))


@dataclass(frozen=True)
class FineTuneSpec:
    strategy: Strategy = Strategy.ANSWER_RELATING
    optimizer: str = "adam"
    learning_rate: float = 1e-4
    max_input_length: int = 64
    batch_size: int = 64
    model_id: str = ""
    epochs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_input_length < 1:
            raise ValueError("max_input_length must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@runtime_checkable
class MaskedLMBackend(Protocol):
    reentrant: bool

    def top_k(self, query: MaskQuery, k: int) -> list[Prediction]: ...

    def loss(self, query: MaskQuery, target: str) -> float: ...

    def fine_tune(self, instances, spec: FineTuneSpec) -> "MaskedLMBackend": ...


def objective(backend: MaskedLMBackend, instances, strategy: "Strategy | str") -> float:
    """Mean negative log-likelihood of the gold distractors, the quantity fine-tuning minimises."""
    instances = list(instances)
    if not instances:
        raise ValueError("no training instances")
    total = 0.0
    for inst in instances:
        q = format_query(inst, strategy)
        total += backend.loss(q, inst.target_distractor)
    return total / len(instances)


def _check_distribution(dist: dict, where: str) -> dict[str, float]:
    out = {}
    for surface, p in dist.items():
        p = float(p)
        if not surface or not 0.0 < p <= 1.0:
            raise ValueError(f"{where}: bad entry {surface!r}: {p}")
        out[surface] = p
    if sum(out.values()) > 1.0 + 1e-9:
        raise ValueError(f"{where}: probabilities sum above 1")
    return out


class StubBackend:
    """Table-driven backend; every answer is read straight off the table."""

    reentrant = True

    def __init__(self, entries=None, fallback=None, max_input_length: int = 64,
                 merge_weight: float = 0.9):
        self._entries: dict[tuple[str, Strategy], dict[str, float]] = {}
        for (key, strat), dist in (entries or {}).items():
            self._entries[(" ".join(key.split()).lower(), Strategy.parse(strat))] = _check_distribution(dist, key)
        self._fallback = {
            Strategy.parse(s): _check_distribution(d, f"fallback/{s}") for s, d in (fallback or {}).items()
        }
        self.max_input_length = max_input_length
        if not 0.0 < merge_weight <= 1.0:
            raise ValueError("merge_weight must lie in (0, 1]")
        self.merge_weight = merge_weight

    # -- persistence

    @classmethod
    def from_json(cls, obj: dict) -> "StubBackend":
        if obj.get("format") != STUB_FORMAT or obj.get("version") != STUB_VERSION:
            raise ValueError(f"not a {STUB_FORMAT} v{STUB_VERSION} table")
        entries = {}
        for e in obj.get("entries", []):
            key = (" ".join(e["query"].split()).lower(), Strategy.parse(e["strategy"]))
            if key in entries:
                raise ValueError(f"duplicate stub entry {e['query']!r}/{e['strategy']}")
            entries[key] = e["predictions"]
        return cls(entries, obj.get("fallback"), obj.get("max_input_length", 64),
                   obj.get("merge_weight", 0.9))

    @classmethod
    def load(cls, path: str | Path) -> "StubBackend":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise TransportError(f"cannot read stub table {path}: {exc}") from exc
        return cls.from_json(json.loads(text))

    def to_json(self) -> dict:
        entries = [
            {"query": key, "strategy": strat.value,
             "predictions": {s: p for s, p in sorted(dist.items(), key=lambda kv: (-kv[1], kv[0]))}}
            for (key, strat), dist in sorted(self._entries.items(), key=lambda kv: (kv[0][0], kv[0][1].value))
        ]
        return {
            "format": STUB_FORMAT,
            "version": STUB_VERSION,
            "max_input_length": self.max_input_length,
            "merge_weight": self.merge_weight,
            "fallback": {s.value: d for s, d in sorted(self._fallback.items(), key=lambda kv: kv[0].value)},
            "entries": entries,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, ensure_ascii=False) + "\n",
                              encoding="utf-8")

    # -- contract

    def distribution(self, query: MaskQuery) -> dict[str, float]:
        n_tokens = len(query.render().split()) + (3 if query.answer_hint is not None else 2)
        if n_tokens > self.max_input_length:
            raise InputTooLongError(query.item_id, n_tokens, self.max_input_length)
        return self._entries.get((query_key(query), query.strategy),
                                 self._fallback.get(query.strategy, {}))

    def top_k(self, query: MaskQuery, k: int) -> list[Prediction]:
        if k < 1:
            raise ValueError("k must be >= 1")
        dist = self.distribution(query)
        return order_predictions(Prediction(s, p) for s, p in dist.items())[:k]

    def loss(self, query: MaskQuery, target: str) -> float:
        if not target:
            raise ValueError("empty target")
        p = self.distribution(query).get(target)
        if p is None:
            raise OutOfVocabularyError(target)
        return max(0.0, -math.log(p))

    def fine_tune(self, instances, spec: FineTuneSpec) -> "StubBackend":
        instances = list(instances)
        if not instances:
            raise ValueError("fine_tune needs at least one training instance")
        counts: dict[tuple[str, Strategy], dict[str, int]] = {}
        for inst in instances:
            q = format_query(inst, spec.strategy)
            n_tokens = len(q.render().split()) + (3 if q.answer_hint is not None else 2)
            if n_tokens > spec.max_input_length:
                raise InputTooLongError(q.item_id, n_tokens, spec.max_input_length)
            slot = counts.setdefault((query_key(q), q.strategy), {})
            slot[inst.target_distractor] = slot.get(inst.target_distractor, 0) + 1

        new = copy.copy(self)
        new._entries = dict(self._entries)
        a = self.merge_weight
        for key, targets in counts.items():
            old = self._entries.get(key, self._fallback.get(key[1], {}))
            n = sum(targets.values())
            merged = {s: (1 - a) * p for s, p in old.items()}
            for s, c in targets.items():
                merged[s] = merged.get(s, 0.0) + a * c / n
            new._entries[key] = {s: min(1.0, p) for s, p in merged.items() if p > 0}
        return new


# -- adapter registry --------------------------------------------------------

AdapterFactory = Callable[[str], MaskedLMBackend]
_ADAPTERS: dict[str, AdapterFactory] = {}


def register_adapter(scheme: str, factory: AdapterFactory) -> None:
    """Make ``scheme:ARG`` backend specs resolve through ``factory(ARG)``."""
    _ADAPTERS[scheme] = factory


def _hf_factory(model_id: str) -> MaskedLMBackend:
    from .hf import HFMaskedLMBackend

    return HFMaskedLMBackend(model_id)


register_adapter("stub", StubBackend.load)
register_adapter("model", _hf_factory)


def load_backend(spec: str) -> MaskedLMBackend:
    scheme, sep, arg = spec.partition(":")
    if not sep or scheme not in _ADAPTERS:
        raise KeyError(f"unknown backend {spec!r}; expected one of "
                       + ", ".join(f"{s}:..." for s in sorted(_ADAPTERS)))
    return _ADAPTERS[scheme](arg)
