"""Synthetic paired-document corpora with planted ground truth, plus JSONL
serialization for external embedding datasets.

Each synthetic pair plants K aligned sentence pairs that share an exact topic
vector on both sides; the 3-level match label is a thresholding of K.  All
sentence embeddings are type centroid + topic + isotropic noise, so both the
rationale classifier and the alignment stage have a recoverable signal whose
strength is controlled by the noise scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import AlignmentLabels, Case, CasePairRecord
from .ioutil import write_text_atomic

__all__ = [
    "SyntheticConfig",
    "DataFormatError",
    "generate_synthetic_corpus",
    "match_label_from_count",
    "mask_alignments",
    "save_jsonl",
    "load_jsonl",
]


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for the planted-corpus generator."""

    pairs: int = 200
    d: int = 32
    sentence_range: tuple[int, int] = (10, 20)
    type_proportions: tuple[float, float, float, float] = (0.25, 0.30, 0.35, 0.10)
    max_aligned: int = 8
    match_thresholds: tuple[int, int] = (2, 5)
    noise_scale: float = 0.3
    alignment_noise: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.pairs < 0:
            raise ValueError(f"pairs must be >= 0, got {self.pairs}")
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        lo, hi = self.sentence_range
        if not (1 <= lo <= hi):
            raise ValueError(f"sentence_range must satisfy 1 <= lo <= hi, got {self.sentence_range}")
        if len(self.type_proportions) != 4 or any(p < 0 for p in self.type_proportions):
            raise ValueError(f"type_proportions must be 4 nonnegative reals, got {self.type_proportions}")
        if abs(sum(self.type_proportions) - 1.0) > 1e-9:
            raise ValueError(f"type_proportions must sum to 1, got sum {sum(self.type_proportions)}")
        t0, t1 = self.match_thresholds
        if not (0 <= t0 < t1):
            raise ValueError(f"match_thresholds must be strictly increasing and >= 0, got {self.match_thresholds}")
        if not (t1 < self.max_aligned <= lo):
            raise ValueError(
                f"max_aligned must lie in ({t1}, {lo}] so every label is reachable "
                f"and aligned pairs fit in the shortest case, got {self.max_aligned}"
            )
        if not 0.0 <= self.alignment_noise <= 1.0:
            raise ValueError(f"alignment_noise must be in [0, 1], got {self.alignment_noise}")
        if self.noise_scale < 0:
            raise ValueError(f"noise_scale must be >= 0, got {self.noise_scale}")

    def to_dict(self) -> dict:
        return {
            "pairs": self.pairs,
            "d": self.d,
            "sentence_range": list(self.sentence_range),
            "type_proportions": list(self.type_proportions),
            "max_aligned": self.max_aligned,
            "match_thresholds": list(self.match_thresholds),
            "noise_scale": self.noise_scale,
            "alignment_noise": self.alignment_noise,
            "seed": self.seed,
        }


class DataFormatError(ValueError):
    """A JSONL line failed structural validation; the message carries the
    line number and the offending field."""


def match_label_from_count(count: int, thresholds: tuple[int, int]) -> int:
    """3-level label from a planted aligned-pair count: 0 below the first
    threshold, 2 above the second, 1 between."""
    t0, t1 = thresholds
    if count <= t0:
        return 0
    if count <= t1:
        return 1
    return 2


def _build_side(
    rng: np.random.Generator,
    centroids: np.ndarray,
    aligned_types: np.ndarray,
    topics: np.ndarray,
    length: int,
    config: SyntheticConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One case: K aligned sentences (shared topics) plus unaligned filler,
    in a shuffled order.  Returns (embeddings, labels, aligned positions)."""
    k = len(aligned_types)
    d = config.d
    labels = np.empty(length, dtype=np.int64)
    embeddings = np.empty((length, d))
    labels[:k] = aligned_types
    embeddings[:k] = (
        centroids[aligned_types] + topics + config.noise_scale * rng.normal(size=(k, d))
    )
    filler_types = rng.choice(4, size=length - k, p=np.asarray(config.type_proportions))
    labels[k:] = filler_types
    embeddings[k:] = (
        centroids[filler_types]
        + rng.normal(size=(length - k, d))
        + config.noise_scale * rng.normal(size=(length - k, d))
    )
    order = rng.permutation(length)
    positions = np.empty(length, dtype=np.int64)
    positions[order] = np.arange(length)
    return embeddings[order], labels[order], positions[:k]


def generate_synthetic_corpus(config: SyntheticConfig) -> list[CasePairRecord]:
    """Generate the planted corpus; fully determined by config.seed."""
    rng = np.random.default_rng(config.seed)
    centroids = rng.normal(size=(4, config.d))
    lo, hi = config.sentence_range
    records = []
    for index in range(config.pairs):
        m = int(rng.integers(lo, hi + 1))
        n = int(rng.integers(lo, hi + 1))
        k = int(rng.integers(0, config.max_aligned + 1))
        aligned_types = rng.integers(1, 4, size=k)
        topics = rng.normal(size=(k, config.d))
        x_emb, x_labels, x_pos = _build_side(rng, centroids, aligned_types, topics, m, config)
        y_emb, y_labels, y_pos = _build_side(rng, centroids, aligned_types, topics, n, config)
        values = np.zeros((m, n), dtype=np.int8)
        kept = rng.random(k) >= config.alignment_noise
        values[x_pos[kept], y_pos[kept]] = 1
        records.append(
            CasePairRecord(
                pair_id=f"pair-{index:05d}",
                x=Case(embeddings=x_emb, rationale_labels=x_labels),
                y=Case(embeddings=y_emb, rationale_labels=y_labels),
                alignments=AlignmentLabels(values=values, observed=values.copy()),
                match_label=match_label_from_count(k, config.match_thresholds),
            )
        )
    return records


def mask_alignments(
    records: Sequence[CasePairRecord], ratio: float, seed: int
) -> list[CasePairRecord]:
    """Keep a uniformly random ceil(ratio * total) subset of each record's
    observed alignment entries; values follow the surviving observations."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must be in [0, 1], got {ratio}")
    if ratio == 1.0:
        return list(records)
    rng = np.random.default_rng(seed)
    masked = []
    for record in records:
        if record.alignments is None:
            masked.append(record)
            continue
        observed_coords = np.argwhere(record.alignments.observed == 1)
        keep = math.ceil(ratio * len(observed_coords))
        new_observed = np.zeros_like(record.alignments.observed)
        if keep > 0:
            chosen = rng.choice(len(observed_coords), size=keep, replace=False)
            rows, cols = observed_coords[chosen].T
            new_observed[rows, cols] = 1
        new_values = record.alignments.values * new_observed
        masked.append(
            CasePairRecord(
                pair_id=record.pair_id,
                x=record.x,
                y=record.y,
                alignments=AlignmentLabels(values=new_values, observed=new_observed),
                match_label=record.match_label,
                explanation_text=record.explanation_text,
            )
        )
    return masked


def _case_to_json(case: Case) -> dict:
    return {
        "sentences": [[float(v) for v in row] for row in case.embeddings],
        "rationale_labels": None
        if case.rationale_labels is None
        else [int(v) for v in case.rationale_labels],
    }


def _record_to_json(record: CasePairRecord) -> dict:
    alignments = None
    if record.alignments is not None:
        alignments = {
            "positives": [[int(m), int(n)] for m, n in np.argwhere(record.alignments.values == 1)],
            "observed": [[int(m), int(n)] for m, n in np.argwhere(record.alignments.observed == 1)],
        }
    return {
        "id": record.pair_id,
        "x": _case_to_json(record.x),
        "y": _case_to_json(record.y),
        "alignments": alignments,
        "match_label": record.match_label,
        "explanation": record.explanation_text,
    }


def save_jsonl(records: Sequence[CasePairRecord], path) -> None:
    """One JSON object per line; floats serialized with round-trip precision."""
    lines = [json.dumps(_record_to_json(record)) for record in records]
    write_text_atomic(path, "".join(line + "\n" for line in lines))


def _require(payload: dict, key: str, line_number: int):
    if key not in payload:
        raise DataFormatError(f"line {line_number}: missing field '{key}'")
    return payload[key]


def _parse_case(payload, side: str, pair_id: str, line_number: int) -> Case:
    if not isinstance(payload, dict):
        raise DataFormatError(f"line {line_number}: field '{side}' must be an object")
    sentences = _require(payload, "sentences", line_number)
    if not isinstance(sentences, list) or len(sentences) == 0:
        raise DataFormatError(
            f"line {line_number}: field '{side}.sentences' must be a non-empty list (pair {pair_id})"
        )
    width = len(sentences[0]) if isinstance(sentences[0], list) else -1
    for index, row in enumerate(sentences):
        if not isinstance(row, list) or len(row) != width or width <= 0:
            raise DataFormatError(
                f"line {line_number}: pair {pair_id} sentence {index} of '{side}' "
                f"has wrong embedding length (expected {width})"
            )
    labels = _require(payload, "rationale_labels", line_number)
    if labels is not None:
        if not isinstance(labels, list) or len(labels) != len(sentences):
            raise DataFormatError(
                f"line {line_number}: field '{side}.rationale_labels' must list one "
                f"label per sentence (pair {pair_id})"
            )
        labels = np.asarray(labels, dtype=np.int64)
    return Case(embeddings=np.asarray(sentences, dtype=np.float64), rationale_labels=labels)


def _parse_alignments(payload, m: int, n: int, pair_id: str, line_number: int):
    if payload is None:
        return None
    if not isinstance(payload, dict):
        raise DataFormatError(f"line {line_number}: field 'alignments' must be an object or null")
    values = np.zeros((m, n), dtype=np.int8)
    observed = np.zeros((m, n), dtype=np.int8)
    for key, matrix in (("positives", values), ("observed", observed)):
        coords = _require(payload, key, line_number)
        if not isinstance(coords, list):
            raise DataFormatError(f"line {line_number}: field 'alignments.{key}' must be a list")
        for coord in coords:
            if (
                not isinstance(coord, list)
                or len(coord) != 2
                or not all(isinstance(v, int) for v in coord)
                or not (0 <= coord[0] < m and 0 <= coord[1] < n)
            ):
                raise DataFormatError(
                    f"line {line_number}: field 'alignments.{key}' entry {coord!r} "
                    f"is out of bounds for pair {pair_id} with shape ({m}, {n})"
                )
            matrix[coord[0], coord[1]] = 1
    if np.any(values > observed):
        raise DataFormatError(
            f"line {line_number}: field 'alignments' lists positives outside "
            f"'observed' for pair {pair_id}"
        )
    return AlignmentLabels(values=values, observed=observed)


def load_jsonl(path) -> list[CasePairRecord]:
    """Parse a JSONL corpus; structural problems raise DataFormatError with
    the line number and field."""
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as error:
                raise DataFormatError(f"line {line_number}: invalid JSON ({error.msg})") from error
            if not isinstance(payload, dict):
                raise DataFormatError(f"line {line_number}: expected a JSON object")
            pair_id = _require(payload, "id", line_number)
            if not isinstance(pair_id, str):
                raise DataFormatError(f"line {line_number}: field 'id' must be a string")
            case_x = _parse_case(_require(payload, "x", line_number), "x", pair_id, line_number)
            case_y = _parse_case(_require(payload, "y", line_number), "y", pair_id, line_number)
            alignments = _parse_alignments(
                _require(payload, "alignments", line_number),
                len(case_x.embeddings),
                len(case_y.embeddings),
                pair_id,
                line_number,
            )
            match_label = _require(payload, "match_label", line_number)
            if match_label is not None and match_label not in (0, 1, 2):
                raise DataFormatError(
                    f"line {line_number}: field 'match_label' must be 0, 1, 2, or null"
                )
            explanation = _require(payload, "explanation", line_number)
            if explanation is not None and not isinstance(explanation, str):
                raise DataFormatError(
                    f"line {line_number}: field 'explanation' must be a string or null"
                )
            records.append(
                CasePairRecord(
                    pair_id=pair_id,
                    x=case_x,
                    y=case_y,
                    alignments=alignments,
                    match_label=match_label,
                    explanation_text=explanation,
                )
            )
    return records
