"""Stage orchestration: config, prepare/generate/rank/evaluate, and ablation runs."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from . import corpus
from ._gate import ordered_map
from .backend import BackendError, Strategy, load_backend
from .corpus import ClozeItem, ParseError
from .csg import DEFAULT_K, DEFAULT_OVERFETCH, CandidateSet, generate_batch
from .metrics import EvalCase, EvalReport, METRIC_NAMES, evaluate_corpus
from .selector import (
    DEFAULT_WEIGHTS,
    WEIGHT_PRESETS,
    FastTextWordEmbedder,
    LexiconTagger,
    MeanWordSentenceEmbedder,
    Providers,
    RankedList,
    SelectorWeights,
    SentenceTransformerEmbedder,
    TableWordEmbedder,
    _check_mode,
    select,
)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Bad configuration; maps to exit status 2."""


class DataError(ValueError):
    """Bad input data; maps to exit status 1."""


@dataclass
class PipelineConfig:
    strategy: Strategy = Strategy.ANSWER_RELATING
    k: int = DEFAULT_K
    weights: SelectorWeights = DEFAULT_WEIGHTS
    similarity_mode: str = "printed"
    backend: str | None = None
    base_backend: str | None = None
    word_embedding: str | None = None
    sentence_embedding: str | None = None
    pos: str | None = None
    items: str | None = None
    candidates: str | None = None
    ranked: str | None = None
    report: str | None = None
    jobs: int = 1
    overfetch: int = DEFAULT_OVERFETCH
    exclude_inflections: bool = False
    scale: str = "x100"
    base_dir: Path = field(default=Path("."), repr=False)

    @classmethod
    def from_dict(cls, obj: dict, base_dir: Path | str = ".") -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)} - {"base_dir"}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg = cls(base_dir=Path(base_dir))
        return cfg.override(**obj)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(obj, path.parent)

    def override(self, **values) -> "PipelineConfig":
        """Return a copy with non-None values applied and coerced."""
        values = {k: v for k, v in values.items() if v is not None}
        try:
            if "strategy" in values:
                values["strategy"] = Strategy.parse(values["strategy"])
            if "weights" in values and not isinstance(values["weights"], SelectorWeights):
                w = values["weights"]
                values["weights"] = (SelectorWeights.parse(w) if isinstance(w, str)
                                     else SelectorWeights(*map(float, w)))
            if "similarity_mode" in values:
                values["similarity_mode"] = _check_mode(values["similarity_mode"])
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        cfg = dataclasses.replace(self, **values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not isinstance(self.k, int) or self.k < 1:
            raise ConfigError(f"k must be an integer >= 1, got {self.k!r}")
        if not isinstance(self.jobs, int) or self.jobs < 1:
            raise ConfigError(f"jobs must be an integer >= 1, got {self.jobs!r}")
        if self.overfetch < 1:
            raise ConfigError("overfetch must be >= 1")
        if self.scale not in ("x100", "fraction"):
            raise ConfigError(f"scale must be x100 or fraction, got {self.scale!r}")
        for name in ("backend", "base_backend", "word_embedding", "pos"):
            spec = getattr(self, name)
            if spec and spec.partition(":")[0] in ("stub", "table", "lexicon", "fasttext"):
                if not self.resolve(spec.partition(":")[2]).exists():
                    raise ConfigError(f"{name}: file not found: {spec}")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def _resolved_spec(self, spec: str) -> str:
        scheme, sep, arg = spec.partition(":")
        if scheme in ("stub", "table", "lexicon", "fasttext"):
            return f"{scheme}:{self.resolve(arg)}"
        return spec

    # -- component construction

    def make_backend(self, which: str = "backend"):
        spec = getattr(self, which)
        if not spec:
            raise ConfigError(f"no {which} configured")
        try:
            return load_backend(self._resolved_spec(spec))
        except (KeyError, BackendError, ValueError) as exc:
            raise ConfigError(f"{which} {spec!r}: {exc}") from exc

    def make_providers(self) -> Providers:
        try:
            word = sentence = tagger = None
            if self.word_embedding:
                scheme, _, arg = self._resolved_spec(self.word_embedding).partition(":")
                if scheme == "table":
                    word = TableWordEmbedder.load(arg)
                elif scheme == "fasttext":
                    word = FastTextWordEmbedder.load(arg)
                else:
                    raise ConfigError(f"unknown word embedding {self.word_embedding!r}")
            if self.sentence_embedding:
                scheme, _, arg = self.sentence_embedding.partition(":")
                if scheme == "mean-word":
                    if word is None:
                        raise ConfigError("mean-word sentence embedding needs a word embedding")
                    sentence = MeanWordSentenceEmbedder(word)
                elif scheme == "st":
                    sentence = SentenceTransformerEmbedder(arg)
                else:
                    raise ConfigError(f"unknown sentence embedding {self.sentence_embedding!r}")
            if self.pos:
                scheme, _, arg = self._resolved_spec(self.pos).partition(":")
                if scheme != "lexicon":
                    raise ConfigError(f"unknown POS tagger {self.pos!r}")
                tagger = LexiconTagger.load(arg)
        except (OSError, KeyError, ValueError, ImportError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"provider setup failed: {exc}") from exc
        return Providers(word, sentence, tagger)


# -- raw data --------------------------------------------------------------


def _raw_records(path: Path) -> Iterable[tuple[str, dict | Exception]]:
    """Yield (location, record-or-error) for a file, JSONL file, or directory of JSON files."""
    if path.is_dir():
        for f in sorted(path.rglob("*.json")):
            try:
                yield f"{f}", json.loads(f.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                yield f"{f}", exc
        return
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".jsonl":
        for lineno, line in enumerate(text.splitlines(), 1):
            if line.strip():
                try:
                    yield f"{path}:{lineno}", json.loads(line)
                except json.JSONDecodeError as exc:
                    yield f"{path}:{lineno}", exc
        return
    obj = json.loads(text)
    if isinstance(obj, list):
        for n, rec in enumerate(obj, 1):
            yield f"{path}[{n}]", rec
    else:
        yield str(path), obj


def prepare(path: str | Path, fmt: str, skip_bad: bool = False,
            max_stem_words: int = corpus.DEFAULT_MAX_STEM_WORDS) -> tuple[list[ClozeItem], list[str]]:
    path = Path(path)
    if fmt not in ("cloth", "dgen", "items"):
        raise ConfigError(f"unknown format {fmt!r}")
    if not path.exists():
        raise ConfigError(f"input not found: {path}")
    items, errors = [], []
    for n, (loc, rec) in enumerate(_raw_records(path)):
        try:
            if isinstance(rec, Exception):
                raise ParseError(f"malformed JSON: {rec}")
            default_id = Path(loc).stem if path.is_dir() else f"{path.stem}-{n}"
            rid = str(rec.get("id") or default_id)
            if fmt == "cloth":
                items.extend(corpus.parse_cloth(rec, rid, max_stem_words))
            elif fmt == "dgen":
                items.append(corpus.parse_dgen(rec, rid))
            else:
                items.append(ClozeItem.from_json(rec))
        except (ParseError, AttributeError, TypeError) as exc:
            errors.append(f"{loc}: {exc}")
    seen = set()
    for item in items:
        if item.id in seen:
            errors.append(f"duplicate item id {item.id!r}")
        seen.add(item.id)
    if errors and not skip_bad:
        raise DataError("\n".join(errors))
    return items, errors


# -- stages ----------------------------------------------------------------


def run_generate(items: list[ClozeItem], cfg: PipelineConfig, backend=None, strategy=None):
    backend = backend if backend is not None else cfg.make_backend()
    return generate_batch(items, backend, strategy or cfg.strategy, cfg.k, jobs=cfg.jobs,
                          overfetch=cfg.overfetch, exclude_inflections=cfg.exclude_inflections)


def run_rank(items_by_id: dict[str, ClozeItem], sets: list[CandidateSet], cfg: PipelineConfig,
             providers: Providers | None = None, weights: SelectorWeights | None = None) -> list[RankedList]:
    weights = weights or cfg.weights
    missing = [s.item_id for s in sets if s.item_id not in items_by_id]
    if missing:
        raise DataError(f"candidate sets reference unknown item ids: {', '.join(missing)}")
    if providers is None:
        providers = cfg.make_providers()
    providers = providers.gated()
    return ordered_map(
        lambda s: select(items_by_id[s.item_id], s, providers, weights, cfg.similarity_mode),
        sets, cfg.jobs,
    )


def run_evaluate(items_by_id: dict[str, ClozeItem], ranked: list[RankedList]) -> EvalReport:
    cases = []
    for r in ranked:
        if r.item_id not in items_by_id:
            raise DataError(f"ranked list references unknown item id {r.item_id!r}")
        cases.append(EvalCase(r.item_id, r.surfaces, items_by_id[r.item_id].gold_distractors))
    try:
        return evaluate_corpus(cases)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def run_all(items: list[ClozeItem], cfg: PipelineConfig, backend=None, providers=None,
            weights=None, strategy=None) -> tuple[list[CandidateSet], list[RankedList], EvalReport]:
    by_id = {i.id: i for i in items}
    batch = run_generate(items, cfg, backend, strategy)
    if batch.errors:
        raise DataError("; ".join(f"{i}: {m}" for i, m in batch.errors))
    ranked = run_rank(by_id, batch.sets, cfg, providers, weights)
    return batch.sets, ranked, run_evaluate(by_id, ranked)


# -- ablation --------------------------------------------------------------

ABLATION_AXES = ("strategy", "weights-preset", "components")
CONFIDENCE_ONLY = SelectorWeights(1.0, 0.0, 0.0, 0.0)


def ablation_variants(axis: str, cfg: PipelineConfig) -> dict[str, dict]:
    """Variant name -> run settings (backend key, strategy, weights)."""
    if axis == "strategy":
        return {s.value: {"backend": "backend", "strategy": s, "weights": cfg.weights}
                for s in (Strategy.NAIVE, Strategy.ANSWER_RELATING)}
    if axis == "weights-preset":
        return {name: {"backend": "backend", "strategy": cfg.strategy, "weights": w}
                for name, w in WEIGHT_PRESETS.items()}
    if axis == "components":
        return {
            "CSG+DS": {"backend": "backend", "strategy": cfg.strategy, "weights": cfg.weights},
            "CSG": {"backend": "backend", "strategy": cfg.strategy, "weights": CONFIDENCE_ONLY},
            "DS": {"backend": "base_backend", "strategy": cfg.strategy, "weights": cfg.weights},
            "None": {"backend": "base_backend", "strategy": cfg.strategy, "weights": CONFIDENCE_ONLY},
        }
    raise ConfigError(f"unknown ablation axis {axis!r}; choose from {', '.join(ABLATION_AXES)}")


def run_ablation(items: list[ClozeItem], cfg: PipelineConfig, axis: str,
                 variants: list[str] | None = None) -> list[dict]:
    table = ablation_variants(axis, cfg)
    if variants is not None:
        if not variants:
            raise ConfigError("empty variant list")
        unknown = [v for v in variants if v not in table]
        if unknown:
            raise ConfigError(f"unknown variants for {axis}: {', '.join(unknown)}")
        table = {v: table[v] for v in variants}
    backends = {key: cfg.make_backend(key) for key in {v["backend"] for v in table.values()}}
    providers = cfg.make_providers()
    rows = []
    for name, v in table.items():
        _, _, report = run_all(items, cfg, backends[v["backend"]], providers, v["weights"], v["strategy"])
        agg = report.scaled(cfg.scale)
        row = {"variant": name, "strategy": v["strategy"].value, "weights": str(v["weights"]),
               "backend": v["backend"]}
        row.update({m: agg[m] for m in METRIC_NAMES})
        rows.append(row)
    return rows


def format_table(rows: list[dict], columns: list[str]) -> str:
    cells = [[c for c in columns]] + [
        [f"{r[c]:.2f}" if isinstance(r[c], float) else str(r[c]) for c in columns] for r in rows
    ]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = [" | ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines)
