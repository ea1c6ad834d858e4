"""Deterministic template explanations and their feature vectors.

Each extraction is rendered under each of the three match hypotheses into a
fixed template whose pro/con counts can be parsed back out, plus a numeric
feature vector: per-type pro and con counts (normalized by the total number
of sentences in the pair), the hypothesis one-hot, and mean-pooled original
embeddings of the pro and con rationale sentences.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .core import MATCH_CLASSES
from .extract import ExtractionResult

__all__ = [
    "ExplanationRecord",
    "type_token",
    "build_input_sequence",
    "render_explanation",
    "parse_explanation_counts",
    "feature_length",
]

# rationale types: 1 = key circumstance (A), 2 = constitutive element (Y),
# 3 = dispute focus (Z); polarity: I = pro (aligned), O = con (unaligned)
_TYPE_LETTERS = {1: "A", 2: "Y", 3: "Z"}

_HYPOTHESIS_SENTENCES = {
    0: "Hypothesis: the cases do not match.",
    1: "Hypothesis: the cases partially match.",
    2: "Hypothesis: the cases fully match.",
}

NO_ALIGNED_PHRASE = "no aligned rationales"
NO_UNMATCHED_PHRASE = "no unmatched rationales"


def type_token(rationale_type: int, pro: bool) -> str:
    """Special token for a typed rationale: [AI], [AO], [YI], [YO], [ZI], [ZO]."""
    if rationale_type not in _TYPE_LETTERS:
        raise ValueError(f"rationale type must be 1, 2, or 3, got {rationale_type}")
    return f"[{_TYPE_LETTERS[rationale_type]}{'I' if pro else 'O'}]"


def build_input_sequence(extraction: ExtractionResult) -> tuple[str, ...]:
    """Token sequence of the extraction: each rationale sentence id preceded
    by its type-and-polarity token; non-rationale sentences are dropped."""
    sequence: list[str] = []
    for pair in extraction.pro_pairs:
        sequence += [type_token(pair.type_x, pro=True), f"x_{pair.m}"]
        sequence += [type_token(pair.type_y, pro=True), f"y_{pair.n}"]
    for entry in extraction.con_x:
        sequence += [type_token(entry.rationale_type, pro=False), f"x_{entry.index}"]
    for entry in extraction.con_y:
        sequence += [type_token(entry.rationale_type, pro=False), f"y_{entry.index}"]
    return tuple(sequence)


def feature_length(d: int) -> int:
    """3 pro counts + 3 con counts + 3-way hypothesis one-hot + two pooled
    d-dimensional embeddings."""
    return 9 + 2 * d


@dataclass(frozen=True, eq=False)
class ExplanationRecord:
    label_hypothesis: int
    text: str
    features: np.ndarray

    def __post_init__(self) -> None:
        if self.label_hypothesis not in range(MATCH_CLASSES):
            raise ValueError(f"label must be in 0..2, got {self.label_hypothesis}")
        self.features.setflags(write=False)


def _pro_type_counts(extraction: ExtractionResult) -> np.ndarray:
    counts = np.zeros(3)
    for pair in extraction.pro_pairs:
        counts[pair.type_x - 1] += 1
    return counts


def _con_type_counts(extraction: ExtractionResult) -> np.ndarray:
    counts = np.zeros(3)
    for entry in extraction.con_x + extraction.con_y:
        counts[entry.rationale_type - 1] += 1
    return counts


def _mean_pool_union(
    embeddings_x: np.ndarray,
    indices_x,
    embeddings_y: np.ndarray,
    indices_y,
) -> np.ndarray:
    """Mean embedding over the selected sentences of both sides together."""
    rows = [embeddings_x[list(indices_x)], embeddings_y[list(indices_y)]]
    stacked = np.concatenate(rows, axis=0)
    if len(stacked) == 0:
        return np.zeros(embeddings_x.shape[1])
    return stacked.mean(axis=0)


def render_explanation(
    extraction: ExtractionResult,
    hypothesis_label: int,
    embeddings_x: np.ndarray,
    embeddings_y: np.ndarray,
) -> ExplanationRecord:
    """Render the extraction under one match hypothesis."""
    if hypothesis_label not in _HYPOTHESIS_SENTENCES:
        raise ValueError(f"hypothesis label must be 0, 1, or 2, got {hypothesis_label}")
    embeddings_x = np.asarray(embeddings_x, dtype=np.float64)
    embeddings_y = np.asarray(embeddings_y, dtype=np.float64)

    pro_count = len(extraction.pro_pairs)
    con_count = len(extraction.con_x) + len(extraction.con_y)
    parts = [_HYPOTHESIS_SENTENCES[hypothesis_label]]
    if pro_count:
        listed = ", ".join(f"x_{p.m}~y_{p.n}" for p in extraction.pro_pairs)
        plural = "s" if pro_count != 1 else ""
        parts.append(f"There are {pro_count} aligned rationale pair{plural}: {listed}.")
    else:
        parts.append(f"There are {NO_ALIGNED_PHRASE}.")
    if con_count:
        listed = ", ".join(
            [f"x_{e.index}" for e in extraction.con_x]
            + [f"y_{e.index}" for e in extraction.con_y]
        )
        plural = "s" if con_count != 1 else ""
        parts.append(f"There are {con_count} unmatched rationale{plural}: {listed}.")
    else:
        parts.append(f"There are {NO_UNMATCHED_PHRASE}.")
    text = " ".join(parts)

    scale = embeddings_x.shape[0] + embeddings_y.shape[0]
    one_hot = np.zeros(3)
    one_hot[hypothesis_label] = 1.0
    pro_pool = _mean_pool_union(
        embeddings_x, extraction.pro_indices_x(), embeddings_y, extraction.pro_indices_y()
    )
    con_pool = _mean_pool_union(
        embeddings_x, extraction.con_indices_x(), embeddings_y, extraction.con_indices_y()
    )
    features = np.concatenate(
        [
            _pro_type_counts(extraction) / scale,
            _con_type_counts(extraction) / scale,
            one_hot,
            pro_pool,
            con_pool,
        ]
    )
    return ExplanationRecord(label_hypothesis=hypothesis_label, text=text, features=features)


_PRO_PATTERN = re.compile(r"There are (\d+) aligned rationale pair")
_CON_PATTERN = re.compile(r"There are (\d+) unmatched rationale")


def parse_explanation_counts(text: str) -> tuple[int, int]:
    """Recover (pro pair count, con rationale count) from a rendered text."""
    pro_match = _PRO_PATTERN.search(text)
    con_match = _CON_PATTERN.search(text)
    if pro_match is None and NO_ALIGNED_PHRASE not in text:
        raise ValueError("text does not look like a rendered explanation")
    pro = int(pro_match.group(1)) if pro_match else 0
    con = int(con_match.group(1)) if con_match else 0
    return pro, con
