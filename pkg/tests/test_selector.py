import json
import math

import numpy as np
import pytest

from clozekit.corpus import ClozeItem
from clozekit.csg import Candidate, CandidateSet
from clozekit.selector import (
    DEFAULT_WEIGHTS,
    WEIGHT_PRESETS,
    FeatureVector,
    LexiconTagger,
    Providers,
    RankedList,
    SelectorWeights,
    TableWordEmbedder,
    UndefinedSimilarityError,
    context_similarity,
    minmax_normalize,
    pos_match,
    rank,
    score,
    select,
    word_similarity,
)

from conftest import FIXTURES

CASE = json.loads((FIXTURES / "selector_case.json").read_text())


class DictSentences:
    reentrant = True

    def __init__(self, table):
        self.table = {k: np.asarray(v, float) for k, v in table.items()}

    def encode(self, text):
        return self.table[text]


def case_inputs():
    item = ClozeItem.from_json(CASE["item"])
    cs = CandidateSet.from_json(CASE["candidates"])
    prov = Providers(TableWordEmbedder(CASE["word_vectors"]), DictSentences(CASE["sentence_vectors"]),
                     LexiconTagger(CASE["pos"]))
    return item, cs, prov


@pytest.mark.parametrize("fn", [word_similarity, context_similarity])
def test_similarity_analytic_cases(fn):
    assert fn([1, 2], [1, 2]) == pytest.approx(0.0, abs=1e-12)
    assert fn([1, 0], [0, 3]) == pytest.approx(1.0)
    assert fn([1, 1], [-2, -2]) == pytest.approx(2.0)
    assert fn([1, 1], [-2, -2], mode="cosine") == pytest.approx(-1.0)
    with pytest.raises(UndefinedSimilarityError):
        fn([0, 0], [1, 0])


def test_pos_match():
    tagger = LexiconTagger({"run": "VERB", "walk": "VERB", "blue": "ADJ"})
    assert pos_match("run", "walk", tagger) == (1, False)
    assert pos_match("run", "blue", tagger) == (0, False)
    assert pos_match("run", "zzyzx", tagger) == (0, True)


@pytest.mark.parametrize("values, expected", [
    ([0.5, 0.2, 0.2], [1.0, 0.0, 0.0]),
    ([1, 2, 3], [0.0, 0.5, 1.0]),
    ([0.3, 0.3], [0.0, 0.0]),
])
def test_minmax(values, expected):
    assert minmax_normalize(values) == pytest.approx(expected)


def test_minmax_errors():
    with pytest.raises(ValueError):
        minmax_normalize([])
    with pytest.raises(ValueError):
        minmax_normalize([1.0, math.nan])
    with pytest.raises(ValueError):
        minmax_normalize([1.0, math.inf])


def test_score_arithmetic():
    feats = [FeatureVector((0, 0, 0, 0), (1, 0, 1, 1)), FeatureVector((0, 0, 0, 0), (0, 1, 0, 1))]
    assert score(feats, DEFAULT_WEIGHTS) == pytest.approx([0.85, 0.25])
    with pytest.raises(ValueError):
        score([(1, 0, 1)], DEFAULT_WEIGHTS)


def test_uniform_weights_swapped_profiles_tie():
    cands = [Candidate("a", 0.1), Candidate("b", 0.9)]
    entries = rank(cands, [(0.1, 1.0, 0.0, 1), (0.9, 0.0, 1.0, 0)], SelectorWeights(0.25, 0.25, 0.25, 0.25))
    # normalised profiles (0,1,0,1) and (1,0,1,0)
    assert entries[0].score == entries[1].score == 0.5
    # equal scores fall back to raw confidence
    assert [e.candidate.surface for e in entries] == ["b", "a"]


def test_weights_validation_and_parse():
    assert SelectorWeights.parse("0.6,0.15,0.15,0.1") == DEFAULT_WEIGHTS
    for bad in ("1,2,3", "-1,1,1,1", "0,0,0,0", "nan,1,1,1"):
        with pytest.raises(ValueError):
            SelectorWeights.parse(bad)


def test_presets_are_the_four_compared_weightings():
    assert [w.as_tuple() for w in WEIGHT_PRESETS.values()] == [
        (0.25, 0.25, 0.25, 0.25), (0.4, 0.2, 0.2, 0.2), (0.6, 0.15, 0.15, 0.1), (0.8, 0.05, 0.05, 0.1)]


def test_hand_computed_case_printed():
    item, cs, prov = case_inputs()
    exp = CASE["expected"]["printed"]
    ranked = select(item, cs, prov, SelectorWeights(*CASE["weights"]), "printed")
    by = {e.candidate.surface: e for e in ranked.entries}
    for word, raw in exp["raw"].items():
        assert by[word].features.s == pytest.approx(raw, abs=1e-8)
        assert by[word].features.n == pytest.approx(exp["normalized"][word], abs=1e-8)
        assert by[word].score == pytest.approx(exp["score"][word], abs=1e-8)
    assert ranked.surfaces == exp["order"]
    assert list(ranked.selected) == exp["selected"]


def test_hand_computed_case_cosine():
    item, cs, prov = case_inputs()
    exp = CASE["expected"]["cosine"]
    ranked = select(item, cs, prov, SelectorWeights(*CASE["weights"]), "cosine")
    assert {e.candidate.surface: e.score for e in ranked.entries} == pytest.approx(exp["score"], abs=1e-8)
    assert ranked.surfaces == exp["order"]
    assert list(ranked.selected) == exp["selected"]


def test_single_candidate():
    item, _, prov = case_inputs()
    cs = CandidateSet("sel-1", "answer", (Candidate("dog", 0.4),))
    ranked = select(item, cs, prov)
    assert ranked.selected == ("dog",) and len(ranked.entries) == 1


def test_identical_features_fall_to_tie_break():
    item = ClozeItem("t", "a [BLANK] b", "x", ("y",))
    cs = CandidateSet("t", "answer", (Candidate("pear", 0.2), Candidate("fig", 0.2), Candidate("apple", 0.2)))
    vec = {w: [1, 1] for w in ("x", "pear", "fig", "apple")}
    ranked = select(item, cs, Providers(TableWordEmbedder(vec), None, LexiconTagger({})))
    assert all(e.score == 0 for e in ranked.entries)
    assert ranked.surfaces == ["apple", "fig", "pear"]


def test_empty_set_short_circuits():
    item, _, prov = case_inputs()
    assert select(item, CandidateSet("sel-1", "answer", ()), prov) == RankedList("sel-1")


def test_provider_failure_degrades_feature():
    item, cs, prov = case_inputs()
    words = dict(CASE["word_vectors"])
    del words["cow"]
    prov.word = TableWordEmbedder(words)
    ranked = select(item, cs, prov)
    cow = next(e for e in ranked.entries if e.candidate.surface == "cow")
    assert cow.features.s[1] is None and cow.features.n[1] == 0.0
    assert "s1" in cow.features.flags
    # remaining s1 values renormalise among themselves: dog .29, car 0, run 2
    dog = next(e for e in ranked.entries if e.candidate.surface == "dog")
    assert dog.features.n[1] == pytest.approx((1 - 1 / math.sqrt(2)) / 2)


def test_unknown_pos_scores_zero_with_flag():
    item, cs, prov = case_inputs()
    prov.tagger = LexiconTagger({"cat": "NOUN"})
    ranked = select(item, cs, prov)
    assert all(e.features.s[3] == 0 and "s3" in e.features.flags for e in ranked.entries)


def test_ranked_json_schema_and_round_trip():
    item, cs, prov = case_inputs()
    ranked = select(item, cs, prov)
    obj = ranked.to_json()
    assert list(obj) == ["id", "entries", "selected"]
    assert list(obj["entries"][0]) == ["text", "s", "n", "score"]
    again = RankedList.from_json(json.loads(json.dumps(obj)))
    assert again.surfaces == ranked.surfaces and again.selected == ranked.selected
