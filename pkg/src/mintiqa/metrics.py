"""Evaluation metrics: rank correlations, preference accuracy, and VQA accuracy.

Correlations are computed directly (mid-rank Spearman, tie-corrected Kendall
tau-b with O(n^2) pair enumeration, textbook Pearson); desk-scale series never
justify anything fancier.  VQA accuracy averages per image first and then over
images, so unequal question counts per image do not bias the result.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    pass


class UndefinedCorrelationError(MetricError):
    """A correlation is undefined (zero variance in one of the series)."""


class AmbiguityError(MetricError):
    """Two distinct vocabulary tokens match the answer at equal length."""


def _as_series(predicted, reference) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predicted, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if p.ndim != 1 or r.ndim != 1 or p.size != r.size:
        raise MetricError(f"series must be parallel 1-d arrays, got {p.shape} / {r.shape}")
    if p.size < 2:
        raise MetricError("series needs at least 2 points")
    return p, r


def _midranks(x: np.ndarray) -> np.ndarray:
    """Fractional ranks; tied values receive the average of their positions."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def plcc(predicted, reference) -> float:
    p, r = _as_series(predicted, reference)
    dp = p - p.mean()
    dr = r - r.mean()
    sp = float(np.dot(dp, dp))
    sr = float(np.dot(dr, dr))
    if sp == 0.0 or sr == 0.0:
        raise UndefinedCorrelationError("constant series: Pearson correlation undefined")
    return float(np.dot(dp, dr) / np.sqrt(sp * sr))


def srcc(predicted, reference) -> float:
    p, r = _as_series(predicted, reference)
    return plcc(_midranks(p), _midranks(r))


def krcc(predicted, reference) -> float:
    """Kendall tau-b over all n(n-1)/2 pairs."""
    p, r = _as_series(predicted, reference)
    n = p.size
    concordant = discordant = ties_p = ties_r = 0
    for i in range(n):
        for j in range(i + 1, n):
            a = np.sign(p[i] - p[j])
            b = np.sign(r[i] - r[j])
            if a == 0 and b == 0:
                continue
            if a == 0:
                ties_p += 1
            elif b == 0:
                ties_r += 1
            elif a == b:
                concordant += 1
            else:
                discordant += 1
    np_pairs = concordant + discordant + ties_r
    nr_pairs = concordant + discordant + ties_p
    if np_pairs == 0 or nr_pairs == 0:
        raise UndefinedCorrelationError("all-ties series: tau-b undefined")
    return (concordant - discordant) / np.sqrt(float(np_pairs) * float(nr_pairs))


def preference_accuracy(pairs) -> float:
    """Fraction of (score_better, score_worse) pairs in the right order; ties 0.5."""
    pairs = list(pairs)
    if not pairs:
        raise MetricError("preference_accuracy: empty pair list")
    total = 0.0
    for better, worse in pairs:
        if better > worse:
            total += 1.0
        elif better == worse:
            total += 0.5
    return total / len(pairs)


# ---------------------------------------------------------------------------
# VQA accuracy
# ---------------------------------------------------------------------------

NO_MATCH = None

_PUNCT = re.compile(r"[^\w\s]")


def _normalize(text: str) -> list[str]:
    return _PUNCT.sub(" ", text.lower()).split()


def distill_and_match(answer_text: str, vocabulary: list[str]) -> str | None:
    """Extract the vocabulary level named in free text; longest match wins.

    Returns None when no vocabulary token occurs.  Raises AmbiguityError when
    two distinct tokens match at the same (maximal) length.
    """
    if not vocabulary:
        raise MetricError("empty vocabulary")
    words = _normalize(answer_text)
    best: list[str] = []
    best_len = 0
    for token in vocabulary:
        tw = _normalize(token)
        if not tw:
            continue
        hit = any(words[i:i + len(tw)] == tw for i in range(len(words) - len(tw) + 1))
        if not hit:
            continue
        if len(tw) > best_len:
            best, best_len = [token], len(tw)
        elif len(tw) == best_len and token not in best:
            best.append(token)
    if not best:
        return NO_MATCH
    if len(best) > 1:
        raise AmbiguityError(f"tokens {best} match at equal length")
    return best[0]


@dataclass(frozen=True)
class VqaItem:
    image_id: str
    dimension: str  # quality | authenticity | correspondence
    question: str
    reference_answer: str
    model_answer_text: str
    vocabulary: tuple[str, ...]


def vqa_accuracy(items: list[VqaItem]) -> dict[str, dict]:
    """Per-dimension two-level accuracy: mean per image, then mean over images.

    A missing or ambiguous keyword match counts as incorrect.  Dimensions with
    no items are absent from the result.
    """
    per_dim: dict[str, dict[str, list[int]]] = {}
    nomatch: dict[str, int] = {}
    counts: dict[str, int] = {}
    for item in items:
        try:
            extracted = distill_and_match(item.model_answer_text, list(item.vocabulary))
        except AmbiguityError:
            extracted = NO_MATCH
        correct = int(extracted is not None and extracted == item.reference_answer)
        if extracted is NO_MATCH:
            nomatch[item.dimension] = nomatch.get(item.dimension, 0) + 1
        per_dim.setdefault(item.dimension, {}).setdefault(item.image_id, []).append(correct)
        counts[item.dimension] = counts.get(item.dimension, 0) + 1
    report: dict[str, dict] = {}
    for dim, by_image in per_dim.items():
        image_means = [sum(v) / len(v) for v in by_image.values()]
        report[dim] = {
            "accuracy": sum(image_means) / len(image_means),
            "n_images": len(by_image),
            "n_questions": counts[dim],
            "n_nomatch": nomatch.get(dim, 0),
        }
    return report


def correlation_report(predicted, reference) -> dict:
    return {
        "srcc": srcc(predicted, reference),
        "plcc": plcc(predicted, reference),
        "krcc": krcc(predicted, reference),
        "n": int(np.asarray(predicted).size),
    }
