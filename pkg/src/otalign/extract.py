"""Turning a converged transport plan into pro and con rationales.

A sentence pair is "pro" (supports matching) when both sides are predicted
rationales and the plan puts at least tau mass on the pair; a predicted
rationale that clears the threshold with no counterpart is "con" (supports
mismatching).  Non-rationale sentences appear in neither list.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .affinity import RationaleExtractor, compute_pair_affinity
from .core import CasePairRecord, TrainConfig, TransportPlan, uniform_problem
from .ioutil import write_text_atomic
from .sinkhorn import NonConvergence, solve_entropic_ot

__all__ = [
    "ProPair",
    "ConRationale",
    "ExtractionResult",
    "ExtractorOutput",
    "extract_rationale_pairs",
    "export_alignment_heatmap",
    "compute_extractor_output",
    "gold_extraction_result",
]


@dataclass(frozen=True)
class ProPair:
    """An aligned rationale pair: sentence m of X matched to sentence n of Y
    with the plan mass that cleared the threshold."""

    m: int
    n: int
    plan_mass: float
    type_x: int
    type_y: int


@dataclass(frozen=True)
class ConRationale:
    """A rationale sentence with no aligned counterpart."""

    index: int
    rationale_type: int


@dataclass(frozen=True)
class ExtractionResult:
    pro_pairs: tuple[ProPair, ...]
    con_x: tuple[ConRationale, ...]
    con_y: tuple[ConRationale, ...]

    def pro_indices_x(self) -> tuple[int, ...]:
        return tuple(sorted({pair.m for pair in self.pro_pairs}))

    def pro_indices_y(self) -> tuple[int, ...]:
        return tuple(sorted({pair.n for pair in self.pro_pairs}))

    def con_indices_x(self) -> tuple[int, ...]:
        return tuple(entry.index for entry in self.con_x)

    def con_indices_y(self) -> tuple[int, ...]:
        return tuple(entry.index for entry in self.con_y)


def extract_rationale_pairs(
    plan: TransportPlan,
    r_hat_x: np.ndarray,
    r_hat_y: np.ndarray,
    tau: float,
) -> ExtractionResult:
    """Threshold the plan into pro pairs and per-side con rationales."""
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    matrix = plan.plan
    r_hat_x = np.asarray(r_hat_x)
    r_hat_y = np.asarray(r_hat_y)
    if matrix.shape != (len(r_hat_x), len(r_hat_y)):
        raise ValueError(
            f"plan shape {matrix.shape} does not match label lengths "
            f"({len(r_hat_x)}, {len(r_hat_y)})"
        )
    rationale_x = r_hat_x != 0
    rationale_y = r_hat_y != 0
    above = (matrix >= tau) & rationale_x[:, None] & rationale_y[None, :]
    pro_pairs = tuple(
        ProPair(
            m=int(m),
            n=int(n),
            plan_mass=float(matrix[m, n]),
            type_x=int(r_hat_x[m]),
            type_y=int(r_hat_y[n]),
        )
        for m, n in np.argwhere(above)
    )
    matched_x = {pair.m for pair in pro_pairs}
    matched_y = {pair.n for pair in pro_pairs}
    con_x = tuple(
        ConRationale(index=int(m), rationale_type=int(r_hat_x[m]))
        for m in np.flatnonzero(rationale_x)
        if int(m) not in matched_x
    )
    con_y = tuple(
        ConRationale(index=int(n), rationale_type=int(r_hat_y[n]))
        for n in np.flatnonzero(rationale_y)
        if int(n) not in matched_y
    )
    return ExtractionResult(pro_pairs=pro_pairs, con_x=con_x, con_y=con_y)


def _format_grid(matrix: np.ndarray, formatter) -> str:
    n_cols = matrix.shape[1]
    lines = ["," + ",".join(str(n) for n in range(n_cols))]
    for m, row in enumerate(matrix):
        lines.append(str(m) + "," + ",".join(formatter(value) for value in row))
    return "".join(line + "\n" for line in lines)


def _companion_path(path) -> str:
    text = str(path)
    if text.endswith(".csv"):
        return text[: -len(".csv")] + "_thresholded.csv"
    return text + "_thresholded.csv"


def export_alignment_heatmap(
    plan: TransportPlan,
    r_hat_x: np.ndarray,
    r_hat_y: np.ndarray,
    tau: float,
    path,
    header_lines: Sequence[str] = (),
) -> tuple[str, str]:
    """Write the plan as a CSV (6-decimal values, sentence-index headers) and
    a companion *_thresholded.csv of binary pro-pair indicators.  Returns the
    two paths written."""
    extraction = extract_rationale_pairs(plan, r_hat_x, r_hat_y, tau)
    binary = np.zeros(plan.plan.shape, dtype=np.int64)
    for pair in extraction.pro_pairs:
        binary[pair.m, pair.n] = 1
    header = "".join(f"# {line}\n" for line in header_lines)
    write_text_atomic(path, header + _format_grid(plan.plan, lambda v: f"{v:.6f}"))
    companion = _companion_path(path)
    write_text_atomic(companion, header + _format_grid(binary, lambda v: str(int(v))))
    return str(path), companion


def gold_extraction_result(record: CasePairRecord) -> ExtractionResult:
    """The extraction implied by the gold annotations: labeled alignment
    positives become pro pairs (mass fixed at 1.0 — downstream consumers use
    only indices and types) and unmatched gold rationales become cons."""
    if record.alignments is None:
        raise ValueError(f"pair {record.pair_id} has no alignment labels")
    if record.x.rationale_labels is None or record.y.rationale_labels is None:
        raise ValueError(f"pair {record.pair_id} has no gold rationale labels")
    labels_x = record.x.rationale_labels
    labels_y = record.y.rationale_labels
    positives = np.argwhere(record.alignments.values == 1)
    pro_pairs = tuple(
        ProPair(
            m=int(m),
            n=int(n),
            plan_mass=1.0,
            type_x=int(labels_x[m]),
            type_y=int(labels_y[n]),
        )
        for m, n in positives
    )
    matched_x = {pair.m for pair in pro_pairs}
    matched_y = {pair.n for pair in pro_pairs}
    con_x = tuple(
        ConRationale(index=int(m), rationale_type=int(labels_x[m]))
        for m in np.flatnonzero(labels_x != 0)
        if int(m) not in matched_x
    )
    con_y = tuple(
        ConRationale(index=int(n), rationale_type=int(labels_y[n]))
        for n in np.flatnonzero(labels_y != 0)
        if int(n) not in matched_y
    )
    return ExtractionResult(pro_pairs=pro_pairs, con_x=con_x, con_y=con_y)


@dataclass(frozen=True)
class ExtractorOutput:
    """Everything stage 1 produces for one pair, ready for extraction
    export, explanation rendering, and the stage-3 matcher."""

    pair_id: str
    plan: TransportPlan
    r_hat_x: np.ndarray
    r_hat_y: np.ndarray
    extraction: ExtractionResult


def compute_extractor_output(
    extractor: RationaleExtractor,
    record: CasePairRecord,
    config: TrainConfig,
) -> ExtractorOutput:
    """Deterministic (noise-free) stage-1 forward pass for one pair."""
    x_emb = torch.as_tensor(record.x.embeddings.copy(), dtype=torch.float64)
    y_emb = torch.as_tensor(record.y.embeddings.copy(), dtype=torch.float64)
    with torch.no_grad():
        pair = compute_pair_affinity(extractor, x_emb, y_emb, noise=False)
    cost = pair.bundle.c_total.numpy()
    try:
        plan = solve_entropic_ot(
            uniform_problem(cost, config.gamma),
            tol=config.sinkhorn_tol,
            max_iter=config.sinkhorn_max_iter,
        )
    except NonConvergence as error:
        error.pair_id = record.pair_id
        raise
    extraction = extract_rationale_pairs(plan, pair.r_hat_x, pair.r_hat_y, config.tau)
    return ExtractorOutput(
        pair_id=record.pair_id,
        plan=plan,
        r_hat_x=pair.r_hat_x,
        r_hat_y=pair.r_hat_y,
        extraction=extraction,
    )
