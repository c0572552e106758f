import math
import random

import pytest
from hypothesis import given, strategies as st

import oracles
from clozekit.metrics import (
    EvalCase,
    evaluate_corpus,
    f1_at_k,
    mrr_at_k,
    ndcg_at_k,
    p_at_1,
)


def case(ranked, gold, item_id="x"):
    return EvalCase(item_id, ranked, gold)


def test_p_at_1():
    assert p_at_1(case(["a", "q"], {"a", "b", "c"})) == 1
    assert p_at_1(case(["x", "a"], {"a"})) == 0
    assert p_at_1(case([], {"a"})) == 0


def test_p_at_1_matching_is_case_insensitive_and_trimmed():
    assert p_at_1(case([" Apple "], {"apple"})) == 1


def test_f1():
    assert f1_at_k(case(["a", "b", "x"], {"a", "b", "c"}), 3) == pytest.approx(2 / 3)
    assert f1_at_k(case(["a", "b", "x"], {"a", "b", "c", "d"}), 3) == pytest.approx(4 / 7)
    assert f1_at_k(case(["x", "y"], {"a"}), 3) == 0.0


def test_f1_precision_uses_cutoff_not_length():
    # one hit out of a single returned candidate: P = 1/10, R = 1/1
    assert f1_at_k(case(["a"], {"a"}), 10) == pytest.approx(2 * 0.1 / 1.1)


def test_mrr():
    assert mrr_at_k(case(["x", "y", "z", "a"], {"a"})) == 0.25
    assert mrr_at_k(case([f"x{i}" for i in range(10)] + ["a"], {"a"}), 10) == 0
    assert mrr_at_k(case(["a"], {"a"})) == 1


def test_ndcg_hand_case():
    c = case(["a", "x", "b", "y"], {"a", "b", "c"})
    dcg = 1 + 1 / math.log2(4)
    idcg = 1 + 1 / math.log2(3) + 1 / math.log2(4)
    assert dcg == 1.5 and idcg == pytest.approx(2.13093, abs=1e-5)
    assert ndcg_at_k(c) == pytest.approx(0.70392, abs=1e-4)


def test_ndcg_extremes():
    assert ndcg_at_k(case(["a", "b", "c", "x"], {"a", "b", "c"})) == 1.0
    assert ndcg_at_k(case(["x", "y"], {"a"})) == 0.0


def test_case_validation():
    with pytest.raises(ValueError):
        case(["a"], set())
    with pytest.raises(ValueError):
        case(["a", "A "], {"b"})


def test_corpus_mean():
    rep = evaluate_corpus([case(["a"], {"a"}, "i1"), case(["x"], {"a"}, "i2")])
    assert rep.aggregate["NDCG@10"] == 0.5
    assert rep.scaled("x100")["NDCG@10"] == 50.0
    assert rep.scaled("fraction")["scale"] == "fraction"


def test_corpus_single_and_empty():
    one = case(["x", "a"], {"a", "b"}, "only")
    rep = evaluate_corpus([one])
    assert rep.aggregate == rep.per_item["only"]
    with pytest.raises(ValueError):
        evaluate_corpus([])


def test_report_json_schema():
    obj = evaluate_corpus([case(["a"], {"a"})]).to_json()
    assert list(obj["aggregate"]) == ["P@1", "F1@3", "F1@10", "MRR@10", "NDCG@10", "scale"]
    assert obj["aggregate"]["scale"] == "x100"
    assert set(obj["per_item"]["x"]) == {"P@1", "F1@3", "F1@10", "MRR@10", "NDCG@10"}


@st.composite
def cases(draw):
    pool = list("abcdefghijklmnop")
    gold = draw(st.lists(st.sampled_from(pool), min_size=1, max_size=5, unique=True))
    ranked = draw(st.lists(st.sampled_from(pool), max_size=10, unique=True))
    return ranked, gold


@given(cases())
def test_oracle_equivalence_property(rg):
    ranked, gold = rg
    c = case(ranked, gold)
    assert abs(p_at_1(c) - oracles.p1(ranked, gold)) <= 1e-9
    assert abs(f1_at_k(c, 3) - oracles.f1(ranked, gold, 3)) <= 1e-9
    assert abs(f1_at_k(c, 10) - oracles.f1(ranked, gold, 10)) <= 1e-9
    assert abs(mrr_at_k(c) - oracles.mrr(ranked, gold)) <= 1e-9
    assert abs(ndcg_at_k(c) - oracles.ndcg(ranked, gold)) <= 1e-9


@given(cases(), st.data())
def test_promotion_never_hurts(rg, data):
    ranked, gold = rg
    hit_positions = [i for i, r in enumerate(ranked) if r in gold and i > 0]
    if not hit_positions:
        return
    i = data.draw(st.sampled_from(hit_positions))
    better = list(ranked)
    better[i - 1], better[i] = better[i], better[i - 1]
    for fn in (p_at_1, lambda c: f1_at_k(c, 3), lambda c: f1_at_k(c, 10), mrr_at_k, ndcg_at_k):
        assert fn(case(better, gold)) >= fn(case(ranked, gold)) - 1e-12


@given(st.lists(st.sampled_from(list("abcdefgh")), min_size=1, max_size=5, unique=True), st.randoms())
def test_all_gold_first_gives_ndcg_one(gold, rnd):
    lead = list(gold)
    rnd.shuffle(lead)
    tail = [t for t in "stuvwxyz"][: rnd.randint(0, 5)]
    assert ndcg_at_k(case(lead + tail, gold)) == 1.0


def test_metrics_bounded():
    rng = random.Random(3)
    for _ in range(300):
        gold = rng.sample("abcdefgh", rng.randint(1, 5))
        ranked = rng.sample("abcdefghijklmn", rng.randint(0, 10))
        for v in evaluate_corpus([case(ranked, gold)]).aggregate.values():
            assert 0.0 <= v <= 1.0
