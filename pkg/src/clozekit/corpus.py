"""Cloze items: the canonical record, dataset parsers and JSONL persistence.

Two raw layouts are accepted:

* CLOTH passages, ``{"article": str, "options": [[4 str], ...],
  "answers": ["A".."D", ...], "source": str}`` with ``_`` marking each blank.
* Flat DGen records, ``{"sentence": str, "answer": str,
  "distractors": [str, ...], "domain": str}`` with one blank placeholder.

Both are turned into :class:`ClozeItem` whose stem carries the literal
``[BLANK]`` marker exactly once.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

BLANK = "[BLANK]"
CLOTH_PLACEHOLDER = "_"
DGEN_PLACEHOLDERS = (BLANK, "**blank**")
# Word budget for a CLOTH stem window; leaves room for subword expansion,
# special tokens and the answer hint inside a 64-token model input.
DEFAULT_MAX_STEM_WORDS = 40

_SENTENCE_END = re.compile(r"[.!?][\"'”’)\]]*$")


class Source(str, Enum):
    CLOTH_M = "CLOTH-M"
    CLOTH_H = "CLOTH-H"
    DGEN = "DGEN"
    OTHER = "OTHER"


class ParseError(ValueError):
    """A raw record could not be turned into valid cloze items."""

    def __init__(self, message: str, record_id: str | None = None):
        self.record_id = record_id
        prefix = f"record {record_id!r}: " if record_id is not None else ""
        super().__init__(prefix + message)


def norm(text: str) -> str:
    """Matching key used everywhere surfaces are compared."""
    return text.strip().casefold()


@dataclass(frozen=True)
class ClozeItem:
    id: str
    stem: str
    answer: str
    gold_distractors: tuple[str, ...]
    source: Source = Source.OTHER
    domain_tag: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "gold_distractors", tuple(self.gold_distractors))
        object.__setattr__(self, "source", Source(self.source))
        if self.stem.count(BLANK) != 1:
            raise ParseError(f"stem must contain {BLANK} exactly once: {self.stem!r}", self.id)
        if not self.answer.strip():
            raise ParseError("empty answer", self.id)
        if not self.gold_distractors:
            raise ParseError("no gold distractors", self.id)
        seen = set()
        for d in self.gold_distractors:
            key = norm(d)
            if not key:
                raise ParseError("empty gold distractor", self.id)
            if key == norm(self.answer):
                raise ParseError(f"answer {self.answer!r} listed as a distractor", self.id)
            if key in seen:
                raise ParseError(f"duplicate gold distractor {d!r}", self.id)
            seen.add(key)

    @property
    def is_multiword(self) -> bool:
        return len(self.answer.split()) > 1

    def fill(self, word: str) -> str:
        """Stem with the blank replaced by ``word``."""
        return self.stem.replace(BLANK, word)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "source": self.source.value,
            "domain": self.domain_tag,
            "stem": self.stem,
            "answer": self.answer,
            "distractors": list(self.gold_distractors),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ClozeItem":
        try:
            return cls(
                id=str(obj["id"]),
                stem=obj["stem"],
                answer=obj["answer"],
                gold_distractors=tuple(obj["distractors"]),
                source=Source(obj.get("source", "OTHER")),
                domain_tag=obj.get("domain"),
            )
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", obj.get("id")) from None
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(str(exc), obj.get("id")) from None


@dataclass(frozen=True)
class TrainingInstance:
    stem: str
    answer: str
    target_distractor: str

    def __post_init__(self):
        if norm(self.target_distractor) == norm(self.answer):
            raise ValueError("training target equals the answer")


# -- CLOTH -----------------------------------------------------------------


def _cloth_source(record: dict) -> Source:
    src = str(record.get("source", "")).lower()
    if "middle" in src:
        return Source.CLOTH_M
    if "high" in src:
        return Source.CLOTH_H
    return Source.OTHER


def _sentence_bounds(words: list[str], pos: int) -> tuple[int, int]:
    start = pos
    while start > 0 and not _SENTENCE_END.search(words[start - 1]):
        start -= 1
    end = pos
    while end < len(words) - 1 and not _SENTENCE_END.search(words[end]):
        end += 1
    return start, end + 1


def _clip(start: int, end: int, pos: int, max_words: int) -> tuple[int, int]:
    if end - start <= max_words:
        return start, end
    left = max(start, pos - (max_words - 1) // 2)
    right = min(end, left + max_words)
    left = max(start, right - max_words)
    return left, right


def parse_cloth(
    record: dict,
    record_id: str | None = None,
    max_stem_words: int = DEFAULT_MAX_STEM_WORDS,
) -> list[ClozeItem]:
    """Split one CLOTH passage into one item per blank.

    The stem is the sentence holding the blank, clipped to ``max_stem_words``
    around it. Other blanks falling inside the same window are filled with
    their keyed answers so the stem keeps a single marker.
    """
    rid = record_id or str(record.get("id") or record.get("source") or "cloth")
    try:
        article = record["article"]
        options = record["options"]
        answers = record["answers"]
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}", rid) from None

    words = article.split()
    blanks = [i for i, w in enumerate(words) if w == CLOTH_PLACEHOLDER]
    if not (len(blanks) == len(options) == len(answers)):
        raise ParseError(
            f"{len(blanks)} blanks, {len(options)} option lists, {len(answers)} answer keys", rid
        )

    keyed = []
    for n, (opts, key) in enumerate(zip(options, answers)):
        idx = ord(str(key).strip().upper()) - ord("A") if len(str(key).strip()) == 1 else -1
        if not 0 <= idx < len(opts):
            raise ParseError(f"answer key {key!r} outside option range for blank {n}", rid)
        keyed.append(idx)

    source = _cloth_source(record)
    items = []
    for n, pos in enumerate(blanks):
        start, end = _clip(*_sentence_bounds(words, pos), pos, max_stem_words)
        window = []
        for i in range(start, end):
            if i == pos:
                window.append(BLANK)
            elif words[i] == CLOTH_PLACEHOLDER:
                m = blanks.index(i)
                window.append(options[m][keyed[m]])
            else:
                window.append(words[i])
        opts = options[n]
        items.append(
            ClozeItem(
                id=f"{rid}-{n}",
                stem=" ".join(window),
                answer=opts[keyed[n]],
                gold_distractors=tuple(o for j, o in enumerate(opts) if j != keyed[n]),
                source=source,
            )
        )
    return items


# -- DGen ------------------------------------------------------------------


def parse_dgen(record: dict, record_id: str | None = None) -> ClozeItem:
    rid = record_id or str(record.get("id", "dgen"))
    try:
        sentence = record["sentence"]
        answer = record["answer"]
        distractors = list(record["distractors"])
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}", rid) from None
    if not distractors:
        raise ParseError("empty distractor list", rid)
    count = sum(sentence.count(p) for p in DGEN_PLACEHOLDERS)
    if count != 1:
        raise ParseError(f"expected one blank placeholder, found {count}", rid)
    for p in DGEN_PLACEHOLDERS:
        sentence = sentence.replace(p, BLANK)
    return ClozeItem(
        id=rid,
        stem=sentence,
        answer=answer,
        gold_distractors=tuple(distractors),
        source=Source.DGEN,
        domain_tag=record.get("domain"),
    )


def extract_training_instances(items: ClozeItem | Iterable[ClozeItem]) -> list[TrainingInstance]:
    """One (stem, answer, distractor) triple per gold distractor."""
    if isinstance(items, ClozeItem):
        items = [items]
    return [
        TrainingInstance(item.stem, item.answer, d)
        for item in items
        for d in item.gold_distractors
    ]


# -- JSONL -----------------------------------------------------------------


def dump_jsonl(objs: Iterable[dict]) -> str:
    return "".join(json.dumps(o, ensure_ascii=False) + "\n" for o in objs)


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                yield lineno, json.loads(line)


def write_items(items: Iterable[ClozeItem], path: str | Path) -> None:
    Path(path).write_text(dump_jsonl(i.to_json() for i in items), encoding="utf-8")


def read_items(path: str | Path) -> list[ClozeItem]:
    out = []
    for lineno, obj in iter_jsonl(path):
        try:
            out.append(ClozeItem.from_json(obj))
        except ParseError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
    return out
