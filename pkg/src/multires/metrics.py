"""Sentence BLEU for separations and set-based multi-label scores."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class BleuScore:
    per_n: list[float]
    brevity_penalty: float
    value: float


def _ngrams(seq: Sequence, n: int) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu(candidate: Sequence, reference: Sequence, max_n: int = 4, smoothing: bool = True) -> BleuScore:
    """Sentence BLEU with uniform weights over n = 1..min(max_n, |candidate|).

    A zero clipped count is replaced by ``1 / (2 * number of candidate n-grams)``
    when ``smoothing`` is on.
    """
    if len(reference) == 0:
        raise ValueError("bleu: empty reference")
    c, r = len(candidate), len(reference)
    if c == 0:
        return BleuScore([0.0] * max_n, 0.0, 0.0)
    per_n = []
    for n in range(1, max_n + 1):
        cand = _ngrams(candidate, n)
        total = sum(cand.values())
        if total == 0:
            per_n.append(0.0)
            continue
        ref = _ngrams(reference, n)
        matched = sum(min(k, ref[g]) for g, k in cand.items())
        if matched == 0 and smoothing:
            per_n.append(1.0 / (2 * total))
        else:
            per_n.append(matched / total)
    used = per_n[:min(max_n, c)]
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    if min(used) == 0.0:
        return BleuScore(per_n, bp, 0.0)
    value = bp * math.exp(sum(math.log(p) for p in used) / len(used))
    return BleuScore(per_n, bp, value)


def bleu_report(predictions: Sequence[Sequence], references: Sequence[Sequence],
                class_of_instance: Sequence[Sequence[int]], **kw) -> dict:
    """Per-instance BLEU averaged within each true class and overall.

    An instance counts toward every class in its label set.
    """
    if not (len(predictions) == len(references) == len(class_of_instance)):
        raise ValueError("bleu_report: predictions, references and classes differ in length")
    scores = [bleu(p, r, **kw).value for p, r in zip(predictions, references)]
    per_class: dict[int, list[float]] = {}
    for s, classes in zip(scores, class_of_instance):
        for k in classes:
            per_class.setdefault(int(k), []).append(s)
    return {
        "overall": float(np.mean(scores)) if scores else float("nan"),
        "per_class": {k: float(np.mean(v)) for k, v in sorted(per_class.items())},
        "scores": scores,
    }


@dataclass
class ClassificationScores:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    macro_f1: float = field(init=False)

    def __post_init__(self):
        self.macro_f1 = float(np.mean(self.f1))

    @property
    def macro_precision(self) -> float:
        return float(np.mean(self.precision))

    @property
    def macro_recall(self) -> float:
        return float(np.mean(self.recall))


def classification_report(pred_sets: Sequence[set], true_sets: Sequence[set], L: int) -> ClassificationScores:
    """Per-class P/R/F1 from set membership (0 on empty denominators); accuracy is exact-set match."""
    if len(pred_sets) != len(true_sets):
        raise ValueError("classification_report: length mismatch")
    tp, fp, fn = np.zeros(L), np.zeros(L), np.zeros(L)
    exact = 0
    for pred, true in zip(pred_sets, true_sets):
        pred, true = set(pred), set(true)
        bad = [k for k in pred | true if not 0 <= k < L]
        if bad:
            raise ValueError(f"label index {bad[0]} outside [0, {L})")
        for k in pred & true:
            tp[k] += 1
        for k in pred - true:
            fp[k] += 1
        for k in true - pred:
            fn[k] += 1
        exact += pred == true
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    acc = exact / len(true_sets) if true_sets else 0.0
    return ClassificationScores(precision, recall, f1, tp + fn, float(acc))
