"""Sentence-alignment learning via inverse optimal transport.

The pipeline pairs two documents given as precomputed sentence embeddings,
classifies rationale sentences, learns a transport cost whose entropic plan
matches labeled alignments, extracts aligned (pro) and unmatched (con)
rationales, renders template explanations, and predicts a three-way match
label from rationales plus candidate explanations.
"""

from .core import (
    AlignmentLabels,
    Case,
    CasePairRecord,
    TrainConfig,
    TransportPlan,
    TransportProblem,
    uniform_problem,
    validate_record,
)
from .sinkhorn import InvalidProblem, NonConvergence, plan_objective, solve_entropic_ot

__all__ = [
    "AlignmentLabels",
    "Case",
    "CasePairRecord",
    "TrainConfig",
    "TransportPlan",
    "TransportProblem",
    "uniform_problem",
    "validate_record",
    "InvalidProblem",
    "NonConvergence",
    "plan_objective",
    "solve_entropic_ot",
]

__version__ = "0.1.0"
