"""Learnable transport cost: semantic distances plus rationale-type affinity.

The cost over sentence pairs is assembled as  C = epsilon * C^r + C^s  where
C^s holds pairwise distances between projected embeddings and C^r marks pairs
whose sampled rationale types agree on a nonzero class.  epsilon <= 0, so
same-type rationale pairs get cheaper transport.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .core import RATIONALE_CLASSES, TrainConfig

DTYPE = torch.float64

_GUMBEL_EPS = 1e-20


class _StraightThrough(torch.autograd.Function):
    """Forward the hard one-hot bit-exactly; backpropagate into the soft
    relaxation as if it were the output (the add-subtract formulation loses
    exactness to rounding in ``1 + s - s``)."""

    @staticmethod
    def forward(ctx, soft: torch.Tensor, hard: torch.Tensor) -> torch.Tensor:
        return hard

    @staticmethod
    def backward(ctx, grad_output: torch.Tensor):
        return grad_output, None

_ACTIVATIONS = {
    "tanh": torch.tanh,
    "sigmoid": torch.sigmoid,
    "identity": lambda t: t,
}


def _init_layer(layer: torch.nn.Module, generator: Optional[torch.Generator]) -> None:
    """Torch-default uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init, but seeded."""
    weight = layer.weight
    fan_in = weight.shape[1] if weight.ndim == 2 else weight.shape[1] * weight.shape[2]
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        weight.uniform_(-bound, bound, generator=generator)
        if layer.bias is not None:
            layer.bias.uniform_(-bound, bound, generator=generator)


class RationaleExtractor(torch.nn.Module):
    """Per-pair affinity model: projection MLP, rationale classifier, class head.

    The classifier runs an input adapter (d -> h) followed by conv_layers
    residual blocks  s := s + conv1(s) * sigmoid(conv2(s))  over the sentence
    sequence, with per-layer dilation; logits come from a linear head (h -> 4).
    """

    def __init__(self, config: TrainConfig, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.config = config
        d, h = config.d, config.h
        self.proj1 = torch.nn.Linear(d, h, dtype=DTYPE)
        self.proj2 = torch.nn.Linear(h, h, dtype=DTYPE)
        self.adapter = torch.nn.Linear(d, h, dtype=DTYPE)
        self.conv_gate_a = torch.nn.ModuleList()
        self.conv_gate_b = torch.nn.ModuleList()
        for dilation in config.dilations:
            padding = dilation * (config.kernel_size - 1) // 2
            for bank in (self.conv_gate_a, self.conv_gate_b):
                bank.append(
                    torch.nn.Conv1d(
                        h, h, config.kernel_size, dilation=dilation, padding=padding,
                        dtype=DTYPE,
                    )
                )
        self.head = torch.nn.Linear(h, RATIONALE_CLASSES, dtype=DTYPE)
        for layer in (self.proj1, self.proj2, self.adapter, self.head,
                      *self.conv_gate_a, *self.conv_gate_b):
            _init_layer(layer, generator)

    def project(self, embeddings: torch.Tensor) -> torch.Tensor:
        """Semantic projection: (M, d) -> (M, h) with one hidden nonlinearity."""
        act = _ACTIVATIONS[self.config.activation]
        return self.proj2(act(self.proj1(embeddings)))

    def classify_logits(
        self, embeddings: torch.Tensor, mask: Optional[torch.Tensor] = None
    ) -> torch.Tensor:
        """Rationale-class logits, (M, d) -> (M, 4).

        mask, when given, is a per-sentence 0/1 vector; masked positions are
        zeroed out of every convolution input, so the logits of unmasked
        sentences match those computed on the unpadded sequence alone.
        """
        state = self.adapter(embeddings)
        for conv_a, conv_b in zip(self.conv_gate_a, self.conv_gate_b):
            source = state if mask is None else state * mask[:, None]
            seq = source.transpose(0, 1).unsqueeze(0)  # (1, h, M)
            gated = conv_a(seq) * torch.sigmoid(conv_b(seq))
            state = state + gated.squeeze(0).transpose(0, 1)
        return self.head(state)


def build_extractor(config: TrainConfig, seed: Optional[int] = None) -> RationaleExtractor:
    generator = torch.Generator()
    generator.manual_seed(config.seed if seed is None else seed)
    return RationaleExtractor(config, generator)


def predicted_labels(logits: torch.Tensor) -> np.ndarray:
    """Hard per-sentence class decisions; ties resolve to the lowest index."""
    return np.argmax(logits.detach().cpu().numpy(), axis=-1)


def gumbel_one_hot(
    logits: torch.Tensor,
    temperature: float = 1.0,
    noise: bool = True,
    generator: Optional[torch.Generator] = None,
    hard: bool = True,
) -> torch.Tensor:
    """Straight-through Gumbel sampling of one-hot class vectors.

    Forward pass returns the hard one-hot of argmax(logits + g) (g = 0 when
    noise is off; argmax ties break to the lowest index).  The backward pass
    treats the output as softmax((logits + g) / temperature).  With
    hard=False the softmax relaxation itself is returned, which is the
    function the straight-through gradient differentiates.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if noise:
        uniform = torch.rand(logits.shape, dtype=logits.dtype, generator=generator)
        gumbel = -torch.log(-torch.log(uniform + _GUMBEL_EPS) + _GUMBEL_EPS)
        perturbed = logits + gumbel
    else:
        perturbed = logits
    soft = torch.softmax(perturbed / temperature, dim=-1)
    if not hard:
        return soft
    index = np.argmax(perturbed.detach().cpu().numpy(), axis=-1)
    hard_one_hot = torch.zeros_like(soft, requires_grad=False)
    hard_one_hot.scatter_(-1, torch.as_tensor(index).unsqueeze(-1), 1.0)
    return _StraightThrough.apply(soft, hard_one_hot.detach())


def semantic_cost(
    projected_x: torch.Tensor, projected_y: torch.Tensor, metric: str = "euclidean"
) -> torch.Tensor:
    """Pairwise distance matrix (M, N) between projected sentence stacks."""
    sx = torch.as_tensor(projected_x, dtype=DTYPE) if not torch.is_tensor(projected_x) else projected_x
    sy = torch.as_tensor(projected_y, dtype=DTYPE) if not torch.is_tensor(projected_y) else projected_y
    if sx.shape[-1] != sy.shape[-1]:
        raise ValueError(f"projected widths differ: {sx.shape[-1]} != {sy.shape[-1]}")
    if metric in ("euclidean", "sqeuclidean"):
        diff = sx[:, None, :] - sy[None, :, :]
        squared = (diff * diff).sum(dim=-1)
        if metric == "sqeuclidean":
            return squared
        # sqrt has an unbounded derivative at 0; route exact zeros around it
        positive = squared > 0
        safe = torch.where(positive, squared, torch.ones_like(squared))
        return torch.where(positive, torch.sqrt(safe), torch.zeros_like(squared))
    if metric == "cosine":
        norms = torch.linalg.vector_norm(sx, dim=-1)[:, None] * torch.linalg.vector_norm(
            sy, dim=-1
        )[None, :]
        cosine = (sx @ sy.T) / norms.clamp_min(1e-12)
        return (1.0 - cosine).clamp_min(0.0)
    raise ValueError(f"unknown metric {metric!r}")


def rationale_cost(
    r_x: torch.Tensor, r_y: torch.Tensor, mask: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """Type-agreement affinity: 1 where both sentences carry the same nonzero
    class, 0 elsewhere; class 0 (not a rationale) never matches anything."""
    if r_x.shape[-1] != RATIONALE_CLASSES or r_y.shape[-1] != RATIONALE_CLASSES:
        raise ValueError("rationale one-hots must have 4 classes")
    agreement = r_x[:, 1:] @ r_y[:, 1:].T
    if mask is not None:
        agreement = agreement * mask
    return agreement


@dataclass
class AffinityBundle:
    """Assembled transport cost and its two ingredients."""

    c_semantic: torch.Tensor
    c_rationale: torch.Tensor
    mask: torch.Tensor
    epsilon: float
    c_total: torch.Tensor


def assemble_affinity(
    c_rationale: torch.Tensor,
    c_semantic: torch.Tensor,
    epsilon: float,
    mask: Optional[torch.Tensor] = None,
) -> AffinityBundle:
    """Combine the two cost components as  C = epsilon * C^r + C^s."""
    if epsilon > 0:
        raise ValueError(f"epsilon must be <= 0, got {epsilon}")
    if c_rationale.shape != c_semantic.shape:
        raise ValueError(
            f"cost component shapes differ: {tuple(c_rationale.shape)} != {tuple(c_semantic.shape)}"
        )
    if mask is None:
        mask = torch.ones_like(c_semantic)
    return AffinityBundle(
        c_semantic=c_semantic,
        c_rationale=c_rationale,
        mask=mask,
        epsilon=float(epsilon),
        c_total=epsilon * c_rationale + c_semantic,
    )


@dataclass
class PairAffinity:
    """Everything the trainer and extractor need from one forward pass."""

    bundle: AffinityBundle
    logits_x: torch.Tensor
    logits_y: torch.Tensor
    r_hat_x: np.ndarray  # hard predicted classes, noise-free argmax
    r_hat_y: np.ndarray


def compute_pair_affinity(
    extractor: RationaleExtractor,
    x_embeddings: torch.Tensor,
    y_embeddings: torch.Tensor,
    *,
    noise: bool = False,
    generator: Optional[torch.Generator] = None,
) -> PairAffinity:
    """One forward pass over a case pair yielding the assembled cost.

    The sampled (straight-through) one-hots feed C^r so gradients reach the
    classifier; the hard noise-free argmax labels are reported separately for
    extraction and the same-type loss mask.
    """
    config = extractor.config
    logits_x = extractor.classify_logits(x_embeddings)
    logits_y = extractor.classify_logits(y_embeddings)
    r_tilde_x = gumbel_one_hot(
        logits_x, config.gumbel_temperature, noise=noise, generator=generator
    )
    r_tilde_y = gumbel_one_hot(
        logits_y, config.gumbel_temperature, noise=noise, generator=generator
    )
    c_semantic = semantic_cost(
        extractor.project(x_embeddings), extractor.project(y_embeddings), config.distance
    )
    c_rationale = rationale_cost(r_tilde_x, r_tilde_y)
    bundle = assemble_affinity(c_rationale, c_semantic, config.epsilon)
    return PairAffinity(
        bundle=bundle,
        logits_x=logits_x,
        logits_y=logits_y,
        r_hat_x=predicted_labels(logits_x),
        r_hat_y=predicted_labels(logits_y),
    )
