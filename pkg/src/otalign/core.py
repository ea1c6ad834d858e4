"""Shared value types for the alignment pipeline.

Everything here is an immutable record: cases (sentence embeddings plus
optional per-sentence rationale labels), pairwise alignment labels with an
observation mask, transport problems/plans, and the training configuration.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

RATIONALE_CLASSES = 4  # class 0 = not a rationale, classes 1..3 = rationale types
MATCH_CLASSES = 3  # 0 = mismatch, 1 = partial match, 2 = match

INPUT_MODES = ("a", "r", "e", "a+e", "r+e", "a\\r", "a\\r+e")
ACTIVATIONS = ("tanh", "sigmoid", "identity")
DISTANCES = ("euclidean", "sqeuclidean", "cosine")


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Case:
    """One document: an ordered stack of sentence embeddings.

    embeddings has shape (n_sentences, d); rationale_labels, when present,
    holds one integer in {0, 1, 2, 3} per sentence.
    """

    embeddings: np.ndarray
    rationale_labels: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 2:
            raise ValueError(f"case embeddings must be 2-dimensional, got shape {emb.shape}")
        object.__setattr__(self, "embeddings", _freeze(emb))
        if self.rationale_labels is not None:
            labels = np.asarray(self.rationale_labels, dtype=np.int64)
            if labels.ndim != 1:
                raise ValueError("rationale labels must be a flat integer sequence")
            object.__setattr__(self, "rationale_labels", _freeze(labels))

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Case):
            return NotImplemented
        if not np.array_equal(self.embeddings, other.embeddings):
            return False
        if (self.rationale_labels is None) != (other.rationale_labels is None):
            return False
        if self.rationale_labels is None:
            return True
        return np.array_equal(self.rationale_labels, other.rationale_labels)


@dataclass(frozen=True, eq=False)
class AlignmentLabels:
    """Cross-case sentence alignment labels.

    values[m, n] = 1 marks sentences m (side x) and n (side y) as aligned;
    observed[m, n] = 1 marks the entry as labeled.  Unobserved entries carry
    no information and must have value 0.
    """

    values: np.ndarray
    observed: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.int8)
        observed = np.asarray(self.observed, dtype=np.int8)
        if values.ndim != 2 or observed.ndim != 2:
            raise ValueError("alignment matrices must be 2-dimensional")
        if values.shape != observed.shape:
            raise ValueError(
                f"alignment values shape {values.shape} != observed mask shape {observed.shape}"
            )
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "observed", _freeze(observed))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def positive_mask(self) -> np.ndarray:
        """Observed positive entries as a boolean matrix."""
        return (self.values == 1) & (self.observed == 1)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AlignmentLabels):
            return NotImplemented
        return np.array_equal(self.values, other.values) and np.array_equal(
            self.observed, other.observed
        )


@dataclass(frozen=True, eq=False)
class CasePairRecord:
    """A pair of cases with whatever supervision accompanies them."""

    pair_id: str
    x: Case
    y: Case
    alignments: Optional[AlignmentLabels] = None
    match_label: Optional[int] = None
    explanation_text: Optional[str] = None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CasePairRecord):
            return NotImplemented
        return (
            self.pair_id == other.pair_id
            and self.x == other.x
            and self.y == other.y
            and self.alignments == other.alignments
            and self.match_label == other.match_label
            and self.explanation_text == other.explanation_text
        )


@dataclass(frozen=True, eq=False)
class TransportProblem:
    """Entropic optimal transport instance: cost matrix, marginals, coefficient."""

    cost: np.ndarray  # (M, N)
    mu: np.ndarray  # row marginal, strictly positive, sums to 1
    nu: np.ndarray  # column marginal, strictly positive, sums to 1
    gamma: float  # entropic coefficient, > 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "cost", _freeze(np.asarray(self.cost, dtype=np.float64)))
        object.__setattr__(self, "mu", _freeze(np.asarray(self.mu, dtype=np.float64)))
        object.__setattr__(self, "nu", _freeze(np.asarray(self.nu, dtype=np.float64)))


def uniform_problem(cost: np.ndarray, gamma: float) -> TransportProblem:
    """Transport problem with uniform marginals, the default throughout training."""
    cost = np.asarray(cost, dtype=np.float64)
    m, n = cost.shape
    return TransportProblem(cost=cost, mu=np.full(m, 1.0 / m), nu=np.full(n, 1.0 / n), gamma=gamma)


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Converged transport plan together with its log-domain potentials.

    The plan factors as exp(log_u[m] - cost[m, n] / gamma + log_v[n]); keeping
    gamma and both potentials on the record makes that reconstruction (and the
    fixed-potentials gradient rule built on it) self-contained.
    """

    plan: np.ndarray  # (M, N), nonnegative, marginals within tolerance
    log_u: np.ndarray  # (M,) row potential
    log_v: np.ndarray  # (N,) column potential
    gamma: float
    iterations: int
    marginal_violation: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "plan", _freeze(np.asarray(self.plan, dtype=np.float64)))
        object.__setattr__(self, "log_u", _freeze(np.asarray(self.log_u, dtype=np.float64)))
        object.__setattr__(self, "log_v", _freeze(np.asarray(self.log_v, dtype=np.float64)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.plan.shape


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for both training stages and the solver."""

    d: int = 32  # input embedding dimension
    h: int = 64  # hidden width of projection / classifier
    conv_layers: int = 3  # depth of the gated dilated conv stack
    kernel_size: int = 3
    dilations: tuple[int, ...] = (1, 2, 4)  # one dilation per conv layer
    activation: str = "tanh"  # nonlinearity between projection layers
    distance: str = "euclidean"  # semantic cost metric
    gamma: float = 0.5  # entropic coefficient of the transport solver
    gamma1: float = 5.0  # weight of the alignment loss in stage 1
    gamma2: float = 0.1  # weight of the unsupervised same-type affinity term
    gamma3: float = 1.0  # weight of explanation fidelity + contrastive terms
    epsilon: float = -1.0  # rationale-affinity coefficient, <= 0
    tau: float = 5e-3  # plan-mass threshold for extracting aligned pairs
    eta1: float = 1e-3  # stage-1 learning rate
    eta3: float = 1e-3  # stage-3 learning rate
    n1: int = 32  # stage-1 batch size (pairs)
    n3: int = 8  # stage-3 batch size (pairs)
    epochs: int = 30
    seed: int = 0
    gumbel_temperature: float = 1.0
    # solver settings for training loops; looser than the solver's own
    # defaults because training visits whatever cost matrices the optimizer
    # produces, including near-degenerate ones that converge slowly, and a
    # 1e-8 marginal error is far below any useful extraction threshold
    sinkhorn_tol: float = 1e-8
    sinkhorn_max_iter: int = 50000
    grad_clip: float = 5.0  # global-norm gradient clip for both stages
    scorer_hidden: int = 64  # hidden width of the match candidate scorer
    input_mode: str = "r+e"  # what the matcher consumes, see INPUT_MODES
    max_sentences: int = 256  # upper bound on sentences per case

    def __post_init__(self) -> None:
        if self.epsilon > 0:
            raise ValueError(f"epsilon must be <= 0, got {self.epsilon}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        for name in ("gumbel_temperature", "sinkhorn_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("gamma1", "gamma2", "gamma3", "eta1", "eta3"):
            # learning rates of 0 are allowed: a zero-rate epoch is the
            # documented way to express "evaluate without updating"
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("d", "h", "conv_layers", "kernel_size", "n1", "n3", "epochs",
                     "scorer_hidden", "sinkhorn_max_iter", "max_sentences"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if len(self.dilations) != self.conv_layers:
            raise ValueError(
                f"need one dilation per conv layer: {len(self.dilations)} != {self.conv_layers}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}, choose from {ACTIVATIONS}")
        if self.distance not in DISTANCES:
            raise ValueError(f"unknown distance {self.distance!r}, choose from {DISTANCES}")
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"unknown input mode {self.input_mode!r}, choose from {INPUT_MODES}")
        object.__setattr__(self, "dilations", tuple(int(x) for x in self.dilations))

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["dilations"] = list(out["dilations"])
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {k: v for k, v in payload.items() if k in known}
        if "dilations" in kwargs:
            kwargs["dilations"] = tuple(kwargs["dilations"])
        return cls(**kwargs)


def validate_record(
    record: CasePairRecord, d: int, max_sentences: int = 256
) -> list[str]:
    """Check one record against the configured embedding dimension.

    Returns a list of human-readable violations; an empty list means the
    record is well formed.  Validation never raises on bad content.
    """
    violations: list[str] = []
    sides = (("x", record.x), ("y", record.y))
    for name, case in sides:
        n, width = case.embeddings.shape
        if width != d:
            violations.append(
                f"{record.pair_id}: {name} embedding dimension {width} != configured d={d}"
            )
        if not np.all(np.isfinite(case.embeddings)):
            violations.append(f"{record.pair_id}: {name} embeddings contain non-finite values")
        if not (1 <= n <= max_sentences):
            violations.append(
                f"{record.pair_id}: {name} has {n} sentences, outside [1, {max_sentences}]"
            )
        if case.rationale_labels is not None:
            labels = case.rationale_labels
            if labels.shape[0] != n:
                violations.append(
                    f"{record.pair_id}: {name} has {labels.shape[0]} rationale labels "
                    f"for {n} sentences"
                )
            bad = np.setdiff1d(labels, np.arange(RATIONALE_CLASSES))
            if bad.size:
                violations.append(
                    f"{record.pair_id}: {name} rationale labels outside 0..3: {sorted(bad.tolist())}"
                )
    if record.alignments is not None:
        ali = record.alignments
        expected = (len(record.x), len(record.y))
        if ali.shape != expected:
            violations.append(
                f"{record.pair_id}: alignment shape {ali.shape} != case shape {expected}"
            )
        else:
            for name, mat in (("values", ali.values), ("observed", ali.observed)):
                if not np.isin(mat, (0, 1)).all():
                    violations.append(f"{record.pair_id}: alignment {name} must be 0/1")
            stray = np.argwhere((ali.values == 1) & (ali.observed == 0))
            for m, n in stray:
                violations.append(
                    f"{record.pair_id}: alignment value 1 at unobserved entry ({m}, {n})"
                )
            rx, ry = record.x.rationale_labels, record.y.rationale_labels
            if rx is not None and ry is not None and rx.shape[0] == len(record.x) \
                    and ry.shape[0] == len(record.y):
                for m, n in np.argwhere(ali.values == 1):
                    if rx[m] != ry[n] or rx[m] == 0:
                        violations.append(
                            f"{record.pair_id}: aligned entry ({m}, {n}) joins rationale "
                            f"types {rx[m]} and {ry[n]}"
                        )
    if record.match_label is not None and record.match_label not in range(MATCH_CLASSES):
        violations.append(
            f"{record.pair_id}: match label {record.match_label} outside 0..{MATCH_CLASSES - 1}"
        )
    return violations
