"""Cloze distractor generation: masked-LM candidates, feature-weighted selection, ranking metrics."""

from .backend import FineTuneSpec, MaskQuery, Prediction, StubBackend, Strategy, format_query, load_backend
from .corpus import ClozeItem, TrainingInstance, extract_training_instances, parse_cloth, parse_dgen
from .csg import Candidate, CandidateSet, generate, generate_batch
from .metrics import EvalCase, EvalReport, evaluate_corpus
from .selector import Providers, RankedList, SelectorWeights, select

__all__ = [
    "FineTuneSpec",
    "MaskQuery",
    "Prediction",
    "StubBackend",
    "Strategy",
    "format_query",
    "load_backend",
    "ClozeItem",
    "TrainingInstance",
    "extract_training_instances",
    "parse_cloth",
    "parse_dgen",
    "Candidate",
    "CandidateSet",
    "generate",
    "generate_batch",
    "EvalCase",
    "EvalReport",
    "evaluate_corpus",
    "Providers",
    "RankedList",
    "SelectorWeights",
    "select",
]

__version__ = "0.1.0"
