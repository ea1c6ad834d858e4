"""Evaluation reports: 3-class match metrics and pair-level extraction
metrics against the labeled alignments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import MATCH_CLASSES

__all__ = [
    "MetricsReport",
    "compute_metrics",
    "extraction_pair_metrics",
    "label_accuracy",
]


@dataclass(frozen=True)
class MetricsReport:
    """Macro-averaged 3-class metrics plus the confusion counts behind them.

    Classes that occur in neither the gold labels nor the predictions have
    undefined precision/recall and are excluded from the macro averages.
    """

    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: tuple[tuple[int, ...], ...]  # confusion[gold][predicted]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "confusion": [list(row) for row in self.confusion],
        }


def compute_metrics(predictions: Sequence[int], gold: Sequence[int]) -> MetricsReport:
    predictions = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    if len(predictions) != len(gold):
        raise ValueError(f"length mismatch: {len(predictions)} predictions, {len(gold)} gold")
    if len(gold) == 0:
        raise ValueError("cannot compute metrics on an empty input")
    out_of_range = (predictions < 0) | (predictions >= MATCH_CLASSES)
    if np.any(out_of_range) or np.any((gold < 0) | (gold >= MATCH_CLASSES)):
        raise ValueError("labels must be in 0..2")
    confusion = np.zeros((MATCH_CLASSES, MATCH_CLASSES), dtype=np.int64)
    np.add.at(confusion, (gold, predictions), 1)
    precisions, recalls, f1s = [], [], []
    for cls in range(MATCH_CLASSES):
        tp = confusion[cls, cls]
        predicted = confusion[:, cls].sum()
        actual = confusion[cls, :].sum()
        if predicted == 0 and actual == 0:
            continue  # class absent everywhere: undefined, excluded
        precision = tp / predicted if predicted > 0 else 0.0
        recall = tp / actual if actual > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)
    return MetricsReport(
        accuracy=float(np.trace(confusion) / len(gold)),
        macro_precision=float(np.mean(precisions)),
        macro_recall=float(np.mean(recalls)),
        macro_f1=float(np.mean(f1s)),
        confusion=tuple(tuple(int(v) for v in row) for row in confusion),
    )


def extraction_pair_metrics(
    predicted_pairs: Sequence[Sequence[tuple[int, int]]],
    gold_pairs: Sequence[Sequence[tuple[int, int]]],
) -> dict:
    """Micro precision/recall/F1 of predicted pro pairs against the labeled
    positives, aggregated over a corpus of pairs of documents."""
    if len(predicted_pairs) != len(gold_pairs):
        raise ValueError(
            f"length mismatch: {len(predicted_pairs)} predictions, {len(gold_pairs)} gold"
        )
    tp = fp = fn = 0
    for predicted, gold in zip(predicted_pairs, gold_pairs):
        predicted = {(int(m), int(n)) for m, n in predicted}
        gold = {(int(m), int(n)) for m, n in gold}
        tp += len(predicted & gold)
        fp += len(predicted - gold)
        fn += len(gold - predicted)
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {
        "pair_precision": precision,
        "pair_recall": recall,
        "pair_f1": f1,
        "true_positives": tp,
        "false_positives": fp,
        "false_negatives": fn,
    }


def label_accuracy(predicted: Sequence[np.ndarray], gold: Sequence[np.ndarray]) -> float:
    """Sentence-level rationale label accuracy over a corpus."""
    if len(predicted) != len(gold):
        raise ValueError(
            f"got {len(predicted)} predictions for {len(gold)} gold label sets"
        )
    correct = total = 0
    for p, g in zip(predicted, gold):
        p = np.asarray(p)
        g = np.asarray(g)
        if p.shape != g.shape:
            raise ValueError(f"label shape mismatch: {p.shape} vs {g.shape}")
        correct += int((p == g).sum())
        total += p.size
    if total == 0:
        raise ValueError("cannot compute accuracy with no labels")
    return correct / total
