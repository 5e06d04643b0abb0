"""Correlation and answer-scoring tests against independent oracles
(scipy.stats reference implementations and hand-computed cases)."""
import math

import numpy as np
import pytest
import scipy.stats

from mintiqa.metrics import (AmbiguityError, MetricError,
                             UndefinedCorrelationError, VqaItem,
                             correlation_report, distill_and_match, krcc,
                             plcc, preference_accuracy, srcc, vqa_accuracy)

RNG = np.random.default_rng(99)


def _tied_series(n=100):
    # quantized values force plenty of ties in both series
    p = np.round(RNG.normal(0, 2, n), 0)
    r = np.round(0.7 * p + RNG.normal(0, 1.5, n), 0)
    return p, r


def test_plcc_matches_scipy_oracle():
    p, r = _tied_series()
    assert plcc(p, r) == pytest.approx(scipy.stats.pearsonr(p, r).statistic,
                                       abs=1e-12)


def test_srcc_matches_scipy_oracle():
    p, r = _tied_series()
    assert srcc(p, r) == pytest.approx(scipy.stats.spearmanr(p, r).statistic,
                                       abs=1e-12)


def test_krcc_matches_scipy_oracle():
    p, r = _tied_series()
    assert krcc(p, r) == pytest.approx(
        scipy.stats.kendalltau(p, r, variant="b").statistic, abs=1e-12)


def test_krcc_matches_hand_enumeration():
    p, r = _tied_series(40)
    n = len(p)
    C = D = tp = tr = 0
    for i in range(n):
        for j in range(i + 1, n):
            dp, dr = p[i] - p[j], r[i] - r[j]
            if dp == 0 and dr == 0:
                continue
            elif dp == 0:
                tp += 1
            elif dr == 0:
                tr += 1
            elif dp * dr > 0:
                C += 1
            else:
                D += 1
    expected = (C - D) / math.sqrt((C + D + tp) * (C + D + tr))
    assert krcc(p, r) == pytest.approx(expected, abs=1e-12)


def test_perfect_and_inverted_correlations():
    x = np.arange(10.0)
    assert srcc(x, x) == pytest.approx(1.0, abs=1e-12)
    assert srcc(x, -x) == pytest.approx(-1.0, abs=1e-12)
    assert krcc(x, x) == pytest.approx(1.0, abs=1e-12)
    assert plcc(x, 3 * x + 2) == pytest.approx(1.0, abs=1e-12)


def test_monotone_transform_invariance_50_transforms():
    p, r = _tied_series()
    base_s = srcc(p, r)
    base_k = krcc(p, r)
    transforms = [
        lambda x, a, b: a * x + b,
        lambda x, a, b: a * np.exp(x / 10.0) + b,
        lambda x, a, b: a * np.arctan(x) + b,
        lambda x, a, b: a * (x ** 3) + b,
        lambda x, a, b: a * np.sinh(x / 5.0) + b,
    ]
    rng = np.random.default_rng(5)
    for i in range(50):
        f = transforms[i % len(transforms)]
        a = rng.uniform(0.5, 3.0)
        b = rng.uniform(-10, 10)
        assert srcc(f(p, a, b), r) == pytest.approx(base_s, abs=1e-12)
        assert krcc(f(p, a, b), r) == pytest.approx(base_k, abs=1e-12)


def test_constant_series_raises():
    with pytest.raises(UndefinedCorrelationError):
        plcc(np.ones(10), np.arange(10.0))
    with pytest.raises(UndefinedCorrelationError):
        srcc(np.arange(10.0), np.full(10, 2.0))


def test_series_contract_errors():
    with pytest.raises(MetricError):
        plcc([1.0], [2.0])
    with pytest.raises(MetricError):
        srcc([1.0, 2.0], [1.0, 2.0, 3.0])


def test_preference_accuracy():
    assert preference_accuracy([(2.0, 1.0), (3.0, 0.0)]) == 1.0
    assert preference_accuracy([(1.0, 2.0)]) == 0.0
    assert preference_accuracy([(1.0, 1.0)]) == 0.5
    assert preference_accuracy([(2.0, 1.0), (1.0, 2.0)]) == 0.5
    with pytest.raises(MetricError):
        preference_accuracy([])


# ---------------------------------------------------------------------------
# keyword extraction
# ---------------------------------------------------------------------------

VOCAB4 = ["very blurry", "partially blurry", "essentially clear", "very clear"]


def test_distill_exact_token():
    assert distill_and_match("very clear", VOCAB4) == "very clear"


def test_distill_embedded_in_sentence():
    text = "The image looks essentially clear, with minor noise."
    assert distill_and_match(text, VOCAB4) == "essentially clear"


def test_distill_longest_match_wins():
    # "very clear" contains "clear"-ish overlap with shorter tokens
    vocab = ["clear", "very clear"]
    assert distill_and_match("it is very clear indeed", vocab) == "very clear"


def test_distill_no_match_returns_none():
    assert distill_and_match("completely unrelated text", VOCAB4) is None


def test_distill_ambiguity_raises():
    vocab = ["very blurry", "very clear"]
    with pytest.raises(AmbiguityError):
        distill_and_match("very blurry or very clear", vocab)


def test_distill_punctuation_and_case_insensitive():
    assert distill_and_match("VERY   Blurry!!!", VOCAB4) == "very blurry"


def test_distill_empty_vocabulary():
    with pytest.raises(MetricError):
        distill_and_match("anything", [])


# ---------------------------------------------------------------------------
# question-answering accuracy
# ---------------------------------------------------------------------------

def _item(i, dim, ref, ans, vocab):
    return VqaItem(image_id=f"img{i}", dimension=dim, question="q?",
                   reference_answer=ref, model_answer_text=ans,
                   vocabulary=tuple(vocab))


def test_vqa_oracle_answers_give_one():
    items = [_item(i, "quality", VOCAB4[i % 4], VOCAB4[i % 4], VOCAB4)
             for i in range(40)]
    out = vqa_accuracy(items)
    assert out["quality"]["accuracy"] == 1.0
    assert out["quality"]["n_images"] == 40


def test_vqa_two_level_averaging():
    # image A: 2 questions, one right; image B: 1 question, right
    items = [_item("A", "quality", VOCAB4[0], VOCAB4[0], VOCAB4),
             _item("A", "quality", VOCAB4[1], VOCAB4[2], VOCAB4),
             _item("B", "quality", VOCAB4[3], VOCAB4[3], VOCAB4)]
    out = vqa_accuracy(items)
    # per-image means 0.5 and 1.0 -> 0.75, not the flat 2/3
    assert out["quality"]["accuracy"] == pytest.approx(0.75, abs=1e-12)


def test_vqa_nomatch_counts_incorrect():
    items = [_item("A", "quality", VOCAB4[0], "no keyword here", VOCAB4)]
    out = vqa_accuracy(items)
    assert out["quality"]["accuracy"] == 0.0
    assert out["quality"]["n_nomatch"] == 1


def test_vqa_ambiguous_counts_incorrect():
    vocab = ["very blurry", "very clear"]
    items = [_item("A", "quality", vocab[0],
                   "very blurry or very clear", vocab)]
    out = vqa_accuracy(items)
    assert out["quality"]["accuracy"] == 0.0


def test_vqa_empty_dimension_absent():
    items = [_item("A", "quality", VOCAB4[0], VOCAB4[0], VOCAB4)]
    out = vqa_accuracy(items)
    assert "authenticity" not in out


def test_vqa_random_baseline_three_options():
    vocab3 = ["highly distorted", "partially distorted",
              "essentially distortion-free"]
    rng = np.random.default_rng(17)
    items = [_item(i, "authenticity", vocab3[rng.integers(3)],
                   vocab3[rng.integers(3)], vocab3) for i in range(10_000)]
    acc = vqa_accuracy(items)["authenticity"]["accuracy"]
    assert acc == pytest.approx(1.0 / 3.0, abs=0.02)


def test_vqa_random_baseline_four_options():
    rng = np.random.default_rng(23)
    items = [_item(i, "quality", VOCAB4[rng.integers(4)],
                   VOCAB4[rng.integers(4)], VOCAB4) for i in range(10_000)]
    acc = vqa_accuracy(items)["quality"]["accuracy"]
    assert acc == pytest.approx(0.25, abs=0.02)


def test_correlation_report_fields():
    p, r = _tied_series()
    rep = correlation_report(p, r)
    assert set(rep) == {"srcc", "plcc", "krcc", "n"}
    assert rep["n"] == 100
    assert rep["srcc"] == srcc(p, r)
