"""Stage-1 training: learning the alignment cost from partial supervision.

The extractor is trained by descending L_R + gamma1 * L_A, where L_R is the
per-sentence rationale classification loss and L_A scores the entropic
transport plan induced by the current cost matrix against the observed
alignment labels.  The plan is computed by a numerical solver outside the
autograd graph; its converged potentials then re-enter the graph as
constants, so the cost gradient of the supervised term is the closed-form
fixed-potentials rule rather than a derivative through the solver iterations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .affinity import AffinityBundle, RationaleExtractor, build_extractor, compute_pair_affinity
from .core import AlignmentLabels, CasePairRecord, TrainConfig, TransportPlan, uniform_problem
from .sinkhorn import NonConvergence, solve_entropic_ot

__all__ = [
    "Stage1Losses",
    "loss_rationale",
    "loss_alignment",
    "grad_alignment_wrt_cost",
    "train_extractor",
    "type_agreement_mask",
]


@dataclass(frozen=True)
class Stage1Losses:
    """Per-batch (or per-epoch mean) stage-1 loss components."""

    l_rationale: float
    l_alignment: float
    total: float

    def __post_init__(self) -> None:
        for name in ("l_rationale", "l_alignment", "total"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite: {getattr(self, name)}")


def loss_rationale(
    logits_x: torch.Tensor,
    logits_y: torch.Tensor,
    labels_x: Optional[np.ndarray],
    labels_y: Optional[np.ndarray],
) -> torch.Tensor:
    """Mean negative log-likelihood of the gold rationale labels over all
    sentences of both cases."""
    if labels_x is None or labels_y is None:
        raise ValueError("gold rationale labels are required for the rationale loss")
    logits = torch.cat([logits_x, logits_y], dim=0)
    labels = torch.as_tensor(np.concatenate([labels_x, labels_y]), dtype=torch.long)
    return torch.nn.functional.cross_entropy(logits, labels, reduction="mean")


def type_agreement_mask(r_hat_x: np.ndarray, r_hat_y: np.ndarray) -> np.ndarray:
    """Indicator of sentence pairs predicted to carry the same nonzero type."""
    r_hat_x = np.asarray(r_hat_x)
    r_hat_y = np.asarray(r_hat_y)
    return ((r_hat_x[:, None] == r_hat_y[None, :]) & (r_hat_x[:, None] != 0)).astype(
        np.float64
    )


def loss_alignment(
    plan: TransportPlan,
    labels: Optional[AlignmentLabels],
    affinity: AffinityBundle,
    r_hat_x: np.ndarray,
    r_hat_y: np.ndarray,
    gamma2: float,
) -> torch.Tensor:
    """Alignment loss of a converged plan under partial supervision.

    Supervised part: mean negative log plan mass over the observed positive
    entries, with the plan recomposed from the frozen potentials as
    log a_mn = log u_m - c_mn / gamma + log v_n so that only the direct
    c_mn dependence is differentiated.  Unsupervised part: gamma2 times the
    total cost mass on pairs whose predicted types agree and are nonzero.
    """
    c_total = affinity.c_total
    if plan.plan.shape != tuple(c_total.shape):
        raise ValueError(
            f"plan shape {plan.plan.shape} does not match cost shape {tuple(c_total.shape)}"
        )
    total = c_total.new_zeros(())
    if labels is not None:
        positive = labels.positive_mask()
        if positive.shape != plan.plan.shape:
            raise ValueError(
                f"label shape {positive.shape} does not match plan shape {plan.plan.shape}"
            )
        count = int(positive.sum())
        if count > 0:
            log_u = torch.as_tensor(plan.log_u.copy(), dtype=c_total.dtype)
            log_v = torch.as_tensor(plan.log_v.copy(), dtype=c_total.dtype)
            log_plan = log_u[:, None] - c_total / plan.gamma + log_v[None, :]
            mask = torch.as_tensor(positive.astype(np.float64))
            total = total - (mask * log_plan).sum() / count
    if gamma2 != 0.0:
        delta = torch.as_tensor(type_agreement_mask(r_hat_x, r_hat_y))
        total = total + gamma2 * (delta * c_total).sum()
    return total


def grad_alignment_wrt_cost(
    plan: TransportPlan,
    labels: Optional[AlignmentLabels],
    gamma: float,
    gamma2: float,
    r_hat_x: np.ndarray,
    r_hat_y: np.ndarray,
) -> np.ndarray:
    """Closed-form gradient of loss_alignment with respect to the cost matrix.

    With the potentials frozen, d(log a_mn)/d(c_mn) = -1/gamma, so the
    supervised term contributes 1/(P*gamma) on each observed positive entry;
    the unsupervised term contributes gamma2 on type-agreement entries.
    """
    grad = np.zeros(plan.plan.shape)
    if labels is not None:
        positive = labels.positive_mask()
        count = int(positive.sum())
        if count > 0:
            grad += positive.astype(np.float64) / (count * gamma)
    if gamma2 != 0.0:
        grad += gamma2 * type_agreement_mask(r_hat_x, r_hat_y)
    return grad


def _pair_losses(
    extractor: RationaleExtractor,
    record: CasePairRecord,
    config: TrainConfig,
    *,
    noise: bool,
    generator: Optional[torch.Generator],
) -> tuple[torch.Tensor, torch.Tensor]:
    """Forward one pair: classify, assemble the cost, solve, score."""
    x_emb = torch.as_tensor(record.x.embeddings.copy(), dtype=torch.float64)
    y_emb = torch.as_tensor(record.y.embeddings.copy(), dtype=torch.float64)
    pair = compute_pair_affinity(extractor, x_emb, y_emb, noise=noise, generator=generator)
    l_r = loss_rationale(
        pair.logits_x, pair.logits_y, record.x.rationale_labels, record.y.rationale_labels
    )
    cost = pair.bundle.c_total.detach().numpy()
    problem = uniform_problem(cost, config.gamma)
    try:
        plan = solve_entropic_ot(
            problem, tol=config.sinkhorn_tol, max_iter=config.sinkhorn_max_iter
        )
    except NonConvergence as error:
        error.pair_id = record.pair_id
        raise
    l_a = loss_alignment(
        plan, record.alignments, pair.bundle, pair.r_hat_x, pair.r_hat_y, config.gamma2
    )
    return l_r, l_a


def train_extractor(
    dataset: Sequence[CasePairRecord],
    config: TrainConfig,
) -> tuple[RationaleExtractor, list[Stage1Losses]]:
    """Train the rationale extractor; returns it with a per-epoch loss trace.

    Deterministic given the config seed: parameter initialization, epoch
    shuffling, and the categorical sampling noise all derive from it.  A
    solver NonConvergence aborts training and carries the offending pair id.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    extractor = build_extractor(config)
    optimizer = torch.optim.Adam(extractor.parameters(), lr=config.eta1)
    shuffler = np.random.default_rng(config.seed)
    gumbel_generator = torch.Generator().manual_seed(config.seed)
    trace: list[Stage1Losses] = []
    for _ in range(config.epochs):
        order = shuffler.permutation(len(dataset))
        epoch_r, epoch_a = 0.0, 0.0
        for start in range(0, len(order), config.n1):
            batch = [dataset[i] for i in order[start : start + config.n1]]
            batch_r = []
            batch_a = []
            for record in batch:
                l_r, l_a = _pair_losses(
                    extractor, record, config, noise=True, generator=gumbel_generator
                )
                batch_r.append(l_r)
                batch_a.append(l_a)
            mean_r = torch.stack(batch_r).mean()
            mean_a = torch.stack(batch_a).mean()
            loss = mean_r + config.gamma1 * mean_a
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(extractor.parameters(), config.grad_clip)
            optimizer.step()
            epoch_r += float(mean_r.detach()) * len(batch)
            epoch_a += float(mean_a.detach()) * len(batch)
        mean_r_epoch = epoch_r / len(dataset)
        mean_a_epoch = epoch_a / len(dataset)
        trace.append(
            Stage1Losses(
                l_rationale=mean_r_epoch,
                l_alignment=mean_a_epoch,
                total=mean_r_epoch + config.gamma1 * mean_a_epoch,
            )
        )
    return extractor, trace
