"""Command line entry point: ``clozekit prepare|generate|rank|evaluate|ablate|report``.

Two training helpers sit alongside: ``finetune`` (backend) and
``train-embeddings`` (subword word vectors).

Exit status is 0 on success, 1 on data errors and 2 on configuration or
usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import corpus
from .backend import BackendError, FineTuneSpec, StubBackend
from .corpus import ParseError, dump_jsonl
from .csg import CandidateSet
from .metrics import METRIC_NAMES
from .pipeline import (
    ABLATION_AXES,
    ConfigError,
    DataError,
    PipelineConfig,
    format_table,
    prepare,
    run_ablation,
    run_evaluate,
    run_generate,
    run_rank,
)
from .selector import RankedList

log = logging.getLogger("clozekit")

EXIT_DATA = 1
EXIT_CONFIG = 2


def _write(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    return cfg.override(
        strategy=args.strategy, k=args.k, weights=args.weights,
        similarity_mode=args.similarity_mode, backend=args.backend,
        base_backend=args.base_backend, word_embedding=args.word_emb,
        sentence_embedding=args.sent_emb, pos=args.pos, jobs=args.jobs,
    )


def _path(cfg: PipelineConfig, value: str | None, key: str) -> Path:
    if value:
        return Path(value)
    configured = getattr(cfg, key)
    if not configured:
        raise ConfigError(f"no {key} path given")
    return cfg.resolve(configured)


def _read_items(path: Path) -> dict[str, corpus.ClozeItem]:
    if not path.exists():
        raise ConfigError(f"items file not found: {path}")
    try:
        return {i.id: i for i in corpus.read_items(path)}
    except (ParseError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _read_jsonl(path: Path, cls):
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    out = []
    for lineno, obj in corpus.iter_jsonl(path):
        try:
            out.append(cls.from_json(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return out


# -- subcommands -----------------------------------------------------------


def cmd_prepare(args) -> int:
    items, errors = prepare(args.input, args.format, args.skip_bad, args.max_stem_words)
    for e in errors:
        log.warning("skipped: %s", e)
    _write(dump_jsonl(i.to_json() for i in items), args.out)
    flagged = sum(i.is_multiword for i in items)
    if flagged:
        log.info("%d items have multi-word answers", flagged)
    return 0


def cmd_generate(args) -> int:
    cfg = _config(args)
    items = list(_read_items(_path(cfg, args.items, "items")).values())
    batch = run_generate(items, cfg)
    _write(dump_jsonl(s.to_json() for s in batch.sets), args.out or cfg.candidates and str(cfg.resolve(cfg.candidates)))
    for item_id, msg in batch.errors:
        log.error("generate failed for %s: %s", item_id, msg)
    return EXIT_DATA if batch.errors and not args.skip_bad else 0


def cmd_rank(args) -> int:
    cfg = _config(args)
    items = _read_items(_path(cfg, args.items, "items"))
    sets = _read_jsonl(_path(cfg, args.candidates, "candidates"), CandidateSet)
    ranked = run_rank(items, sets, cfg)
    _write(dump_jsonl(r.to_json() for r in ranked), args.out or cfg.ranked and str(cfg.resolve(cfg.ranked)))
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    items = _read_items(_path(cfg, args.items, "items"))
    ranked = _read_jsonl(_path(cfg, args.ranked, "ranked"), RankedList)
    report = run_evaluate(items, ranked)
    scale = args.scale or cfg.scale
    text = json.dumps(report.to_json(scale), indent=2, ensure_ascii=False) + "\n"
    _write(text, args.out or cfg.report and str(cfg.resolve(cfg.report)))
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    items = list(_read_items(_path(cfg, args.items, "items")).values())
    variants = None
    if args.variants is not None:
        variants = [v for v in args.variants.split(";") if v.strip()]
    rows = run_ablation(items, cfg, args.axis, variants)
    payload = {"axis": args.axis, "scale": cfg.scale, "rows": rows}
    _write(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", args.out)
    if args.out not in (None, "-"):
        print(format_table(rows, ["variant", *METRIC_NAMES]))
    return 0


def cmd_report(args) -> int:
    try:
        obj = json.loads(Path(args.input).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {args.input}: {exc}") from exc
    if "rows" in obj:
        print(f"axis: {obj['axis']} ({obj.get('scale', 'x100')})")
        print(format_table(obj["rows"], ["variant", *METRIC_NAMES]))
    elif "aggregate" in obj:
        agg = obj["aggregate"]
        row = {"items": str(len(obj.get("per_item", {}))), **{m: agg[m] for m in METRIC_NAMES}}
        print(f"scale: {agg.get('scale')}")
        print(format_table([row], ["items", *METRIC_NAMES]))
    else:
        raise DataError(f"{args.input}: neither an evaluation report nor an ablation table")
    return 0


def cmd_finetune(args) -> int:
    cfg = _config(args)
    items = list(_read_items(_path(cfg, args.items, "items")).values())
    spec = FineTuneSpec(strategy=cfg.strategy, learning_rate=args.lr, batch_size=args.batch_size,
                        max_input_length=args.max_length, epochs=args.epochs,
                        model_id=cfg.backend or "")
    backend = cfg.make_backend()
    tuned = backend.fine_tune(corpus.extract_training_instances(items), spec)
    if not hasattr(tuned, "save"):
        raise ConfigError("backend cannot be saved")
    tuned.save(args.out)
    if not isinstance(tuned, StubBackend) and getattr(tuned, "report", None):
        log.info("fine-tune report: %s", tuned.report)
    return 0


def cmd_train_embeddings(args) -> int:
    from .selector import FastTextConfig, FastTextWordEmbedder

    path = Path(args.input)
    if not path.exists():
        raise ConfigError(f"corpus not found: {path}")
    if path.suffix == ".jsonl":
        texts = [i.fill(i.answer) for i in corpus.read_items(path)]
    else:
        texts = [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not texts:
        raise DataError(f"{path}: empty corpus")
    try:
        emb = FastTextWordEmbedder.train(texts, FastTextConfig(epochs=args.epochs, seed=args.seed))
    except ImportError as exc:
        raise ConfigError("train-embeddings needs gensim (install the fasttext extra)") from exc
    emb.save(args.out)
    return 0


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override it")
    common.add_argument("--strategy", choices=["naive", "answer"])
    common.add_argument("--k", type=int, help="candidate set size (default 10)")
    common.add_argument("--weights", help="w0,w1,w2,w3 (default 0.6,0.15,0.15,0.1)")
    common.add_argument("--similarity-mode", choices=["printed", "cosine"])
    common.add_argument("--backend", help="stub:PATH or model:ID")
    common.add_argument("--base-backend", help="unfinetuned backend for component ablation")
    common.add_argument("--word-emb", help="table:PATH or fasttext:PATH")
    common.add_argument("--sent-emb", help="mean-word or st:MODEL_ID")
    common.add_argument("--pos", help="lexicon:PATH")
    common.add_argument("--jobs", type=int)
    common.add_argument("--skip-bad", action="store_true", help="continue past bad records")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="clozekit", description="Cloze distractor generation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="raw dataset -> items JSONL")
    p.add_argument("input")
    p.add_argument("--format", choices=["cloth", "dgen", "items"], required=True)
    p.add_argument("--max-stem-words", type=int, default=corpus.DEFAULT_MAX_STEM_WORDS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("generate", parents=[common], help="items -> candidates JSONL")
    p.add_argument("--items")
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("rank", parents=[common], help="candidates + items -> ranked JSONL")
    p.add_argument("--candidates")
    p.add_argument("--items")
    p.add_argument("--out")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("evaluate", parents=[common], help="ranked + items -> report JSON")
    p.add_argument("--ranked")
    p.add_argument("--items")
    p.add_argument("--scale", choices=["x100", "fraction"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common], help="one metrics row per variant")
    p.add_argument("--items")
    p.add_argument("--axis", choices=ABLATION_AXES, required=True)
    p.add_argument("--variants", help="';'-separated subset of variant names")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", parents=[common], help="print a report or ablation JSON as a table")
    p.add_argument("input")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("finetune", parents=[common], help="train the backend on gold distractors")
    p.add_argument("--items")
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--max-length", type=int, default=64)
    p.add_argument("--epochs", type=int, default=1)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("train-embeddings", help="train subword word vectors for --word-emb fasttext:PATH")
    p.add_argument("input", help="plain text (one sentence per line) or items JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_train_embeddings)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (DataError, ParseError, BackendError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
