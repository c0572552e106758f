"""Distractor selection: four per-candidate features, min-max normalised and blended.

Features for candidate ``d`` of an item with answer ``a`` and stem ``S``:

    s0  backend confidence of d
    s1  1 - cos(vec(a), vec(d))            (word embeddings)
    s2  1 - cos(enc(S with a), enc(S with d))  (sentence embeddings)
    s3  1 if a and d carry the same POS tag else 0

With ``similarity_mode="cosine"`` s1 and s2 become the plain cosine.
Each feature is min-max normalised across the candidate set and the final
score is the weighted sum of normalised features.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from ._gate import gated
from .corpus import ClozeItem, norm
from .csg import Candidate, CandidateSet

log = logging.getLogger(__name__)

N_FEATURES = 4
TOP_N = 3
SIMILARITY_MODES = ("printed", "cosine")


class UndefinedSimilarityError(ValueError):
    pass


# -- weights ---------------------------------------------------------------


@dataclass(frozen=True)
class SelectorWeights:
    w0: float = 0.6
    w1: float = 0.15
    w2: float = 0.15
    w3: float = 0.1

    def __post_init__(self):
        ws = self.as_tuple()
        if not all(math.isfinite(w) and w >= 0 for w in ws):
            raise ValueError(f"weights must be finite and non-negative: {ws}")
        if sum(ws) <= 0:
            raise ValueError("weights must not all be zero")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w0, self.w1, self.w2, self.w3)

    @classmethod
    def parse(cls, text: str) -> "SelectorWeights":
        parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
        if len(parts) != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} comma-separated weights, got {text!r}")
        return cls(*(float(p) for p in parts))

    def __str__(self):
        return ",".join(f"{w:g}" for w in self.as_tuple())


DEFAULT_WEIGHTS = SelectorWeights()

# The four weightings compared in the weight-preset ablation.
WEIGHT_PRESETS = {
    "0.25/0.25/0.25/0.25": SelectorWeights(0.25, 0.25, 0.25, 0.25),
    "0.4/0.2/0.2/0.2": SelectorWeights(0.4, 0.2, 0.2, 0.2),
    "0.6/0.15/0.15/0.1": SelectorWeights(0.6, 0.15, 0.15, 0.1),
    "0.8/0.05/0.05/0.1": SelectorWeights(0.8, 0.05, 0.05, 0.1),
}


# -- feature primitives ----------------------------------------------------


def _cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0 or not (math.isfinite(nu) and math.isfinite(nv)):
        raise UndefinedSimilarityError("cosine undefined for a zero or non-finite vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _check_mode(mode: str) -> str:
    mode = {"as-printed": "printed"}.get(mode, mode)
    if mode not in SIMILARITY_MODES:
        raise ValueError(f"similarity_mode must be one of {SIMILARITY_MODES}, got {mode!r}")
    return mode


def word_similarity(answer_vec, cand_vec, mode: str = "printed") -> float:
    c = _cosine(answer_vec, cand_vec)
    return 1.0 - c if _check_mode(mode) == "printed" else c


def context_similarity(sent_vec_answer, sent_vec_cand, mode: str = "printed") -> float:
    c = _cosine(sent_vec_answer, sent_vec_cand)
    return 1.0 - c if _check_mode(mode) == "printed" else c


def pos_match(answer: str, cand: str, tagger, answer_context: str | None = None,
              cand_context: str | None = None) -> tuple[int, bool]:
    """Return ``(s3, unknown)``; a word the tagger cannot tag scores 0 and sets ``unknown``."""
    contextual = getattr(tagger, "contextual", False)
    ta = tagger.tag(answer, answer_context if contextual else None)
    tc = tagger.tag(cand, cand_context if contextual else None)
    if ta is None or tc is None:
        return 0, True
    return int(ta == tc), False


def minmax_normalize(values: Sequence[float]) -> list[float]:
    if len(values) == 0:
        raise ValueError("cannot normalise an empty list")
    vals = [float(v) for v in values]
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("non-finite value in min-max input")
    lo, hi = min(vals), max(vals)
    if hi == lo:
        return [0.0] * len(vals)
    span = hi - lo
    return [min(1.0, max(0.0, (v - lo) / span)) for v in vals]


# -- providers -------------------------------------------------------------


class WordEmbedder(Protocol):
    def vector(self, word: str) -> np.ndarray: ...


class SentenceEmbedder(Protocol):
    def encode(self, text: str) -> np.ndarray: ...


class Tagger(Protocol):
    contextual: bool

    def tag(self, word: str, context: str | None = None) -> str | None: ...


_WORD = re.compile(r"[\w'-]+")


class TableWordEmbedder:
    """Fixed word->vector table; multi-word phrases average their words."""

    reentrant = True

    def __init__(self, vectors: dict[str, Sequence[float]]):
        self._vectors = {norm(w): np.asarray(v, dtype=np.float64) for w, v in vectors.items()}

    @classmethod
    def load(cls, path: str | Path) -> "TableWordEmbedder":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(obj["vectors"])

    def __contains__(self, word: str) -> bool:
        return norm(word) in self._vectors

    def vector(self, word: str) -> np.ndarray:
        key = norm(word)
        if key in self._vectors:
            return self._vectors[key]
        parts = key.split()
        if len(parts) > 1:
            return np.mean([self.vector(p) for p in parts], axis=0)
        raise KeyError(word)


class MeanWordSentenceEmbedder:
    """Sentence vector as the mean of known word vectors; deterministic and model-free."""

    reentrant = True

    def __init__(self, words: WordEmbedder):
        self.words = words

    def _known(self, token: str):
        try:
            return self.words.vector(token)
        except KeyError:
            return None

    def encode(self, text: str) -> np.ndarray:
        vecs = [v for v in map(self._known, _WORD.findall(text.lower())) if v is not None]
        if not vecs:
            raise KeyError(f"no known words in {text!r}")
        return np.mean(vecs, axis=0)


@dataclass(frozen=True)
class FastTextConfig:
    """Word-embedding training settings: CBOW, character n-grams 3..6, 100 dims, lr 0.05."""

    cbow: bool = True
    min_n: int = 3
    max_n: int = 6
    vector_size: int = 100
    learning_rate: float = 0.05
    window: int = 5
    min_count: int = 1
    epochs: int = 5
    seed: int = 1


class FastTextWordEmbedder:
    """Subword (character n-gram) embeddings via gensim; handles unseen words."""

    reentrant = True

    def __init__(self, keyed_vectors, model=None):
        self.kv = keyed_vectors
        self.model = model  # set when trained here; None after load

    @classmethod
    def train(cls, sentences, config: FastTextConfig = FastTextConfig()) -> "FastTextWordEmbedder":
        from gensim.models import FastText

        tokenized = [_WORD.findall(s.lower()) if isinstance(s, str) else list(s) for s in sentences]
        model = FastText(
            sentences=tokenized,
            sg=0 if config.cbow else 1,
            min_n=config.min_n,
            max_n=config.max_n,
            vector_size=config.vector_size,
            alpha=config.learning_rate,
            window=config.window,
            min_count=config.min_count,
            epochs=config.epochs,
            seed=config.seed,
            workers=1,
        )
        return cls(model.wv, model)

    @classmethod
    def load(cls, path: str | Path) -> "FastTextWordEmbedder":
        from gensim.models.fasttext import FastTextKeyedVectors, load_facebook_vectors

        path = str(path)
        if path.endswith(".bin"):
            return cls(load_facebook_vectors(path))
        return cls(FastTextKeyedVectors.load(path))

    def save(self, path: str | Path) -> None:
        self.kv.save(str(path))

    def vector(self, word: str) -> np.ndarray:
        parts = norm(word).split()
        if not parts:
            raise KeyError(word)
        return np.mean([self.kv[p] for p in parts], axis=0)


class SentenceTransformerEmbedder:
    reentrant = False

    def __init__(self, model_id: str):
        from sentence_transformers import SentenceTransformer

        self.model = SentenceTransformer(model_id)

    def encode(self, text: str) -> np.ndarray:
        return np.asarray(self.model.encode(text), dtype=np.float64)


class LexiconTagger:
    """Context-free tagger backed by a word->tag table."""

    reentrant = True
    contextual = False

    def __init__(self, table: dict[str, str]):
        self._table = {norm(w): t for w, t in table.items()}

    @classmethod
    def load(cls, path: str | Path) -> "LexiconTagger":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(obj["tags"] if "tags" in obj else obj)

    def tag(self, word: str, context: str | None = None) -> str | None:
        return self._table.get(norm(word))


@dataclass
class Providers:
    word: WordEmbedder | None = None
    sentence: SentenceEmbedder | None = None
    tagger: Tagger | None = None

    def gated(self) -> "Providers":
        return Providers(gated(self.word), gated(self.sentence), gated(self.tagger))


# -- scoring and selection -------------------------------------------------


@dataclass(frozen=True)
class FeatureVector:
    s: tuple  # raw s0..s3; None where a provider failed
    n: tuple = ()  # normalised n0..n3
    flags: tuple[str, ...] = ()


def normalize_features(raw: Sequence[Sequence[float | None]]) -> list[tuple[float, ...]]:
    """Per-feature min-max across the set; failed (None) entries get the worst value, 0."""
    if not raw:
        return []
    cols = []
    for j in range(N_FEATURES):
        col = [r[j] for r in raw]
        ok = [i for i, v in enumerate(col) if v is not None]
        out = [0.0] * len(col)
        if ok:
            for i, v in zip(ok, minmax_normalize([col[i] for i in ok])):
                out[i] = v
        cols.append(out)
    return [tuple(c[i] for c in cols) for i in range(len(raw))]


def score(features, weights: SelectorWeights | Sequence[float]) -> list[float]:
    """Weighted sum of normalised features for each candidate."""
    w = weights.as_tuple() if isinstance(weights, SelectorWeights) else tuple(weights)
    out = []
    for f in features:
        n = f.n if isinstance(f, FeatureVector) else tuple(f)
        if len(n) != len(w):
            raise ValueError(f"{len(w)} weights for {len(n)} features")
        out.append(sum(wj * nj for wj, nj in zip(w, n)))
    return out


@dataclass(frozen=True)
class RankedEntry:
    candidate: Candidate
    features: FeatureVector
    score: float

    def to_json(self) -> dict:
        return {
            "text": self.candidate.surface,
            "s": list(self.features.s),
            "n": list(self.features.n),
            "score": self.score,
        }


@dataclass(frozen=True)
class RankedList:
    item_id: str
    entries: tuple[RankedEntry, ...] = ()
    selected: tuple[str, ...] = ()

    @property
    def surfaces(self) -> list[str]:
        return [e.candidate.surface for e in self.entries]

    def to_json(self) -> dict:
        return {
            "id": self.item_id,
            "entries": [e.to_json() for e in self.entries],
            "selected": list(self.selected),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RankedList":
        entries = tuple(
            RankedEntry(
                Candidate(e["text"], float(e["s"][0]) if e["s"][0] is not None else 0.0),
                FeatureVector(tuple(e["s"]), tuple(e["n"])),
                float(e["score"]),
            )
            for e in obj["entries"]
        )
        return cls(str(obj["id"]), entries, tuple(obj["selected"]))


def _guard(flags: list, name: str, fn, *args):
    try:
        return fn(*args)
    except Exception as exc:  # provider failures degrade the feature, never the item
        flags.append(name)
        log.debug("%s failed: %s", name, exc)
        return None


def compute_features(item: ClozeItem, candidates: Sequence[Candidate], providers: Providers,
                     mode: str = "printed") -> list[FeatureVector]:
    """Raw s0..s3 for each candidate, with normalised values filled in."""
    mode = _check_mode(mode)
    item_flags: list[str] = []
    a_word = _guard(item_flags, "s1", providers.word.vector, item.answer) if providers.word else None
    a_filled = item.fill(item.answer)
    a_sent = _guard(item_flags, "s2", providers.sentence.encode, a_filled) if providers.sentence else None

    raws, flag_sets = [], []
    for c in candidates:
        flags: list[str] = []
        s1 = s2 = None
        if a_word is not None:
            v = _guard(flags, "s1", providers.word.vector, c.surface)
            if v is not None:
                s1 = _guard(flags, "s1", word_similarity, a_word, v, mode)
        else:
            flags.append("s1")
        if a_sent is not None:
            filled = item.fill(c.surface)
            v = _guard(flags, "s2", providers.sentence.encode, filled)
            if v is not None:
                s2 = _guard(flags, "s2", context_similarity, a_sent, v, mode)
        else:
            flags.append("s2")
        if providers.tagger is not None:
            s3, unknown = pos_match(item.answer, c.surface, providers.tagger, a_filled,
                                    item.fill(c.surface))
            if unknown:
                flags.append("s3")
        else:
            s3 = 0
            flags.append("s3")
        raws.append((c.confidence, s1, s2, s3))
        flag_sets.append(tuple(dict.fromkeys(flags)))
    degraded = sorted({f for fs in flag_sets for f in fs})
    if degraded:
        log.info("item %s: degraded features %s", item.id, ",".join(degraded))
    normed = normalize_features(raws)
    return [FeatureVector(r, n, fl) for r, n, fl in zip(raws, normed, flag_sets)]


def rank_key(entry: RankedEntry):
    # score desc, then raw confidence desc, then surface
    return (-entry.score, -entry.candidate.confidence, entry.candidate.surface)


def rank(candidates: Sequence[Candidate], features, weights: SelectorWeights = DEFAULT_WEIGHTS) -> list[RankedEntry]:
    """Order candidates by weighted score.

    ``features`` are FeatureVectors, or raw ``(s0, s1, s2, s3)`` rows which are
    normalised here first.
    """
    features = list(features)
    if features and not isinstance(features[0], FeatureVector):
        raw = [tuple(f) for f in features]
        features = [FeatureVector(r, n) for r, n in zip(raw, normalize_features(raw))]
    scores = score(features, weights)
    return sorted((RankedEntry(c, f, s) for c, f, s in zip(candidates, features, scores)), key=rank_key)


def select(item: ClozeItem, candidate_set: CandidateSet, providers: Providers,
           weights: SelectorWeights = DEFAULT_WEIGHTS, mode: str = "printed",
           top_n: int = TOP_N) -> RankedList:
    if candidate_set.empty:
        return RankedList(candidate_set.item_id)
    feats = compute_features(item, candidate_set.candidates, providers, mode)
    entries = rank(candidate_set.candidates, feats, weights)
    return RankedList(candidate_set.item_id, tuple(entries),
                      tuple(e.candidate.surface for e in entries[:top_n]))
