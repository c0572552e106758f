"""Masked-LM adapter over Hugging Face ``transformers`` checkpoints.

Requires the ``hf`` extra (torch + transformers). Model ids are passed
through to ``from_pretrained`` untouched, so both hub names and local
directories work.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass

from .backend import (
    CapabilityError,
    FineTuneSpec,
    InputTooLongError,
    MaskQuery,
    OutOfVocabularyError,
    Prediction,
    TransportError,
    format_query,
)

log = logging.getLogger(__name__)


@dataclass
class FineTuneReport:
    instances: int
    approximate: int
    steps: int
    final_loss: float


class HFMaskedLMBackend:
    """Fill-mask over a pretrained checkpoint.

    Predictions are whole words: word-start markers are stripped, while
    continuation pieces and anything not purely alphabetic are dropped.
    Multi-piece targets are scored and trained on their first piece only.
    """

    reentrant = False

    def __init__(self, model_id: str, max_input_length: int = 64, device: str = "cpu",
                 model=None, tokenizer=None):
        try:
            import torch  # noqa: F401
            from transformers import AutoModelForMaskedLM, AutoTokenizer
        except ImportError as exc:
            raise TransportError("the model backend needs torch and transformers installed") from exc
        self.model_id = model_id
        self.max_input_length = max_input_length
        self.device = device
        try:
            self.tokenizer = tokenizer or AutoTokenizer.from_pretrained(model_id)
            self.model = model or AutoModelForMaskedLM.from_pretrained(model_id)
        except (OSError, ValueError) as exc:
            raise TransportError(f"cannot load masked LM {model_id!r}: {exc}") from exc
        if self.tokenizer.mask_token is None:
            raise CapabilityError(f"{model_id!r} has no mask token")
        self.model.to(device).eval()
        self.report: FineTuneReport | None = None

    # -- encoding

    def _encode(self, queries: list[MaskQuery]):
        tok = self.tokenizer
        # Answer-relating input is encoded as a sentence pair: stem [SEP] answer.
        firsts = [" ".join(f"{q.left_context} {tok.mask_token} {q.right_context}".split()) for q in queries]
        hints = [q.answer_hint.strip() if q.answer_hint is not None else None for q in queries]
        for q, a, b in zip(queries, firsts, hints):
            n = len(tok(a, b)["input_ids"] if b is not None else tok(a)["input_ids"])
            if n > self.max_input_length:
                raise InputTooLongError(q.item_id, n, self.max_input_length)
        if all(b is None for b in hints):
            batch = tok(firsts, padding=True, return_tensors="pt")
        elif all(b is not None for b in hints):
            batch = tok(firsts, hints, padding=True, return_tensors="pt")
        else:
            raise ValueError("mixed strategies in one batch")
        return batch.to(self.device)

    def _mask_positions(self, input_ids):
        pos = (input_ids == self.tokenizer.mask_token_id).nonzero()
        if len(pos) != input_ids.shape[0]:
            raise ValueError("every query must hold exactly one mask token")
        return pos[:, 1]

    def _mask_logprobs(self, query: MaskQuery):
        import torch

        batch = self._encode([query])
        with torch.no_grad():
            logits = self.model(**batch).logits
        pos = self._mask_positions(batch["input_ids"])
        return torch.log_softmax(logits[0, pos[0]], dim=-1)

    def _surface(self, token: str) -> str:
        # WordPiece continuation pieces never stand alone as words.
        if token.startswith("##"):
            return ""
        return self.tokenizer.convert_tokens_to_string([token]).strip()

    def _target_ids(self, target: str) -> tuple[int, bool]:
        tok = self.tokenizer
        pieces = tok.tokenize(" " + target.strip())
        if not pieces:
            raise OutOfVocabularyError(target)
        tid = tok.convert_tokens_to_ids(pieces[0])
        if tid is None or tid == tok.unk_token_id:
            raise OutOfVocabularyError(target)
        return tid, len(pieces) > 1

    # -- contract

    def top_k(self, query: MaskQuery, k: int) -> list[Prediction]:
        import torch

        if k < 1:
            raise ValueError("k must be >= 1")
        logp = self._mask_logprobs(query)
        special = set(self.tokenizer.all_special_ids)
        probs = torch.exp(logp)
        scan = min(probs.shape[0], max(200, 50 * k))
        values, indices = torch.topk(probs, scan)
        seen, out = set(), []
        for p, idx in zip(values.tolist(), indices.tolist()):
            if idx in special or p <= 0.0:
                continue
            surface = self._surface(self.tokenizer.convert_ids_to_tokens(idx))
            if not surface.isalpha() or surface.casefold() in seen:
                continue
            seen.add(surface.casefold())
            out.append(Prediction(surface, min(1.0, p)))
            if len(out) == k:
                break
        return sorted(out, key=lambda x: (-x.probability, x.surface))

    def score_target(self, query: MaskQuery, target: str) -> tuple[float, bool]:
        """Negative log-probability of ``target`` and whether it was approximated by its first piece."""
        tid, approximate = self._target_ids(target)
        logp = self._mask_logprobs(query)[tid].item()
        if not math.isfinite(logp):
            raise OutOfVocabularyError(target)
        return max(0.0, -logp), approximate

    def loss(self, query: MaskQuery, target: str) -> float:
        return self.score_target(query, target)[0]

    def fine_tune(self, instances, spec: FineTuneSpec) -> "HFMaskedLMBackend":
        import torch

        instances = list(instances)
        if not instances:
            raise ValueError("fine_tune needs at least one training instance")
        if spec.optimizer.lower() != "adam":
            raise CapabilityError(f"optimizer {spec.optimizer!r} not supported; use adam")

        model = copy.deepcopy(self.model).to(self.device)
        model.train()
        new = copy.copy(self)
        new.model = model
        new.max_input_length = spec.max_input_length
        opt = torch.optim.Adam(model.parameters(), lr=spec.learning_rate)

        queries = [format_query(i, spec.strategy) for i in instances]
        targets = [new._target_ids(i.target_distractor) for i in instances]
        approximate = sum(a for _, a in targets)
        if approximate:
            log.info("%d/%d targets trained on their first piece", approximate, len(instances))

        steps, last = 0, float("nan")
        for _ in range(spec.epochs):
            for start in range(0, len(instances), spec.batch_size):
                qs = queries[start:start + spec.batch_size]
                tids = torch.tensor([t for t, _ in targets[start:start + spec.batch_size]],
                                    device=self.device)
                batch = new._encode(qs)
                pos = new._mask_positions(batch["input_ids"])
                labels = torch.full_like(batch["input_ids"], -100)
                labels[torch.arange(len(qs)), pos] = tids
                out = model(**batch, labels=labels)
                opt.zero_grad()
                out.loss.backward()
                opt.step()
                steps += 1
                last = out.loss.item()
        model.eval()
        new.report = FineTuneReport(len(instances), approximate, steps, last)
        return new

    def save(self, path) -> None:
        self.model.save_pretrained(path)
        self.tokenizer.save_pretrained(path)
