"""Stage-3 match prediction from extracted rationales and candidate
explanations.

One shared two-layer sigmoid scorer rates each of the three candidate
explanations against the pooled rationale embeddings; a 3x3 linear head turns
the three scores into a class distribution.  Training combines the match NLL
with two cosine hinge losses that tie a projection of the pooled rationales
to the gold explanation (fidelity) and push it away from same-hypothesis
candidates of other pairs in the batch (contrastive).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .affinity import DTYPE, _init_layer
from .core import CasePairRecord, MATCH_CLASSES, TrainConfig
from .explain import feature_length, render_explanation
from .extract import ExtractionResult, ExtractorOutput, gold_extraction_result

__all__ = [
    "MatchPredictor",
    "MatchPrediction",
    "MatchExample",
    "MatchLosses",
    "InputMode",
    "build_matcher",
    "parse_input_mode",
    "pool_rationales",
    "build_match_example",
    "predict_match",
    "loss_match",
    "loss_explanation_fidelity",
    "loss_contrastive",
    "train_matcher",
]


@dataclass(frozen=True)
class InputMode:
    """What the matcher consumes: which sentences are pooled per side, and
    whether candidate explanations carry their extraction-derived content."""

    pool: str  # "all" | "rationales" | "complement" | "none"
    explanations: bool


_INPUT_MODES = {
    "a": InputMode(pool="all", explanations=False),
    "r": InputMode(pool="rationales", explanations=False),
    "e": InputMode(pool="none", explanations=True),
    "a+e": InputMode(pool="all", explanations=True),
    "r+e": InputMode(pool="rationales", explanations=True),
    "a\\r": InputMode(pool="complement", explanations=False),
    "a\\r+e": InputMode(pool="complement", explanations=True),
}


def parse_input_mode(mode: str) -> InputMode:
    try:
        return _INPUT_MODES[mode]
    except KeyError:
        raise ValueError(
            f"unknown input mode {mode!r}, choose from {sorted(_INPUT_MODES)}"
        ) from None


class MatchPredictor(torch.nn.Module):
    """Candidate scorer + class head + similarity projection."""

    def __init__(self, config: TrainConfig, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.config = config
        d = config.d
        e_dim = feature_length(d)
        self.scorer1 = torch.nn.Linear(2 * d + e_dim, config.scorer_hidden, dtype=DTYPE)
        self.scorer2 = torch.nn.Linear(config.scorer_hidden, 1, dtype=DTYPE)
        self.head = torch.nn.Linear(MATCH_CLASSES, MATCH_CLASSES, dtype=DTYPE)
        self.sim_projection = torch.nn.Linear(2 * d, e_dim, dtype=DTYPE)
        for layer in (self.scorer1, self.scorer2, self.head, self.sim_projection):
            _init_layer(layer, generator)

    def score_candidates(
        self, s_rx: torch.Tensor, s_ry: torch.Tensor, candidates: torch.Tensor
    ) -> torch.Tensor:
        """Scores of the three candidates: sigmoid 2-layer perceptron over
        [s_rX; s_rY; candidate features], shared across candidates."""
        if candidates.shape[0] != MATCH_CLASSES:
            raise ValueError(f"expected {MATCH_CLASSES} candidates, got {candidates.shape[0]}")
        sides = torch.cat([s_rx, s_ry]).expand(MATCH_CLASSES, -1)
        stacked = torch.cat([sides, candidates], dim=1)
        hidden = torch.sigmoid(self.scorer1(stacked))
        return torch.sigmoid(self.scorer2(hidden)).squeeze(-1)

    def head_distribution(self, scores: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.head(scores), dim=-1)

    def project_similarity(self, s_rx: torch.Tensor, s_ry: torch.Tensor) -> torch.Tensor:
        return self.sim_projection(torch.cat([s_rx, s_ry]))


def build_matcher(config: TrainConfig, seed: Optional[int] = None) -> MatchPredictor:
    generator = torch.Generator()
    generator.manual_seed(config.seed if seed is None else seed)
    return MatchPredictor(config, generator)


def pool_rationales(
    extraction: ExtractionResult,
    embeddings_x: np.ndarray,
    embeddings_y: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean embedding of the rationale sentences per side (pro plus con);
    zero vector for a side with none."""
    pooled = []
    for embeddings, pro, con in (
        (embeddings_x, "pro_indices_x", "con_indices_x"),
        (embeddings_y, "pro_indices_y", "con_indices_y"),
    ):
        indices = sorted(set(getattr(extraction, pro)()) | set(getattr(extraction, con)()))
        if indices:
            pooled.append(np.asarray(embeddings)[indices].mean(axis=0))
        else:
            pooled.append(np.zeros(np.asarray(embeddings).shape[1]))
    return pooled[0], pooled[1]


def _pool_by_mode(
    mode: InputMode,
    extraction: ExtractionResult,
    embeddings_x: np.ndarray,
    embeddings_y: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    if mode.pool == "rationales":
        return pool_rationales(extraction, embeddings_x, embeddings_y)
    if mode.pool == "none":
        return (
            np.zeros(np.asarray(embeddings_x).shape[1]),
            np.zeros(np.asarray(embeddings_y).shape[1]),
        )
    pooled = []
    for embeddings, pro, con in (
        (embeddings_x, "pro_indices_x", "con_indices_x"),
        (embeddings_y, "pro_indices_y", "con_indices_y"),
    ):
        embeddings = np.asarray(embeddings)
        if mode.pool == "all":
            indices = list(range(len(embeddings)))
        else:  # complement: the non-rationale sentences
            rationale = set(getattr(extraction, pro)()) | set(getattr(extraction, con)())
            indices = [i for i in range(len(embeddings)) if i not in rationale]
        if indices:
            pooled.append(embeddings[indices].mean(axis=0))
        else:
            pooled.append(np.zeros(embeddings.shape[1]))
    return pooled[0], pooled[1]


def _mask_candidate_features(features: np.ndarray, mode: InputMode) -> np.ndarray:
    """Without explanations, a candidate keeps only its hypothesis one-hot:
    the matcher still sees which label it is scoring, but none of the
    extraction-derived content."""
    if mode.explanations:
        return features
    masked = np.zeros_like(features)
    masked[6:9] = features[6:9]
    return masked


@dataclass(frozen=True, eq=False)
class MatchExample:
    """One pair, ready for the matcher: pooled sides, the three candidate
    feature vectors and texts, and (when supervised) gold label/features."""

    pair_id: str
    s_rx: np.ndarray
    s_ry: np.ndarray
    candidates: np.ndarray  # (3, e_dim)
    candidate_texts: tuple[str, str, str]
    gold_label: Optional[int]
    gold_features: Optional[np.ndarray]


def build_match_example(
    record: CasePairRecord,
    output: ExtractorOutput,
    mode: InputMode,
) -> MatchExample:
    """Assemble the matcher input for one pair from its stage-1 output."""
    embeddings_x = record.x.embeddings
    embeddings_y = record.y.embeddings
    s_rx, s_ry = _pool_by_mode(mode, output.extraction, embeddings_x, embeddings_y)
    rendered = [
        render_explanation(output.extraction, label, embeddings_x, embeddings_y)
        for label in range(MATCH_CLASSES)
    ]
    candidates = np.stack(
        [_mask_candidate_features(r.features, mode) for r in rendered]
    )
    gold_features = None
    if (
        record.match_label is not None
        and record.alignments is not None
        and record.x.rationale_labels is not None
        and record.y.rationale_labels is not None
    ):
        gold = render_explanation(
            gold_extraction_result(record), record.match_label, embeddings_x, embeddings_y
        )
        gold_features = _mask_candidate_features(gold.features, mode)
    return MatchExample(
        pair_id=record.pair_id,
        s_rx=s_rx,
        s_ry=s_ry,
        candidates=candidates,
        candidate_texts=tuple(r.text for r in rendered),
        gold_label=record.match_label,
        gold_features=gold_features,
    )


@dataclass(frozen=True)
class MatchPrediction:
    label: int
    chosen_index: int
    distribution: tuple[float, float, float]
    scores: tuple[float, float, float]


def predict_match(
    predictor: MatchPredictor,
    s_rx: np.ndarray,
    s_ry: np.ndarray,
    candidates: np.ndarray,
) -> MatchPrediction:
    """Label = argmax of the class distribution; the reported explanation is
    the candidate with the highest score (which may differ from the label)."""
    with torch.no_grad():
        scores = predictor.score_candidates(
            torch.as_tensor(np.asarray(s_rx, dtype=np.float64)),
            torch.as_tensor(np.asarray(s_ry, dtype=np.float64)),
            torch.as_tensor(np.asarray(candidates, dtype=np.float64)),
        )
        distribution = predictor.head_distribution(scores)
    scores = scores.numpy()
    distribution = distribution.numpy()
    return MatchPrediction(
        label=int(np.argmax(distribution)),
        chosen_index=int(np.argmax(scores)),
        distribution=tuple(float(p) for p in distribution),
        scores=tuple(float(s) for s in scores),
    )


def loss_match(distribution: torch.Tensor, gold: int) -> torch.Tensor:
    """Negative log probability of the gold class."""
    if gold not in range(MATCH_CLASSES):
        raise ValueError(f"gold label must be in 0..2, got {gold}")
    distribution = torch.as_tensor(distribution)
    return -torch.log(distribution[gold])


def _cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.cosine_similarity(a, b, dim=0, eps=1e-12)


def loss_explanation_fidelity(
    predictor: MatchPredictor,
    s_rx: torch.Tensor,
    s_ry: torch.Tensor,
    candidates: torch.Tensor,
    gold_features: torch.Tensor,
) -> torch.Tensor:
    """Hinge on cosine similarity: no candidate may look more like the
    projected rationales than the gold explanation does."""
    projected = predictor.project_similarity(s_rx, s_ry)
    gold_cosine = _cosine(projected, gold_features)
    total = projected.new_zeros(())
    for k in range(candidates.shape[0]):
        total = total + torch.clamp(_cosine(projected, candidates[k]) - gold_cosine, min=0.0)
    return total


def loss_contrastive(
    predictor: MatchPredictor,
    s_rx: torch.Tensor,
    s_ry: torch.Tensor,
    candidates: torch.Tensor,
    negatives: Sequence[Sequence[torch.Tensor]],
) -> torch.Tensor:
    """Hinge pushing same-hypothesis candidates of other pairs below this
    pair's own candidates in projected cosine similarity."""
    projected = predictor.project_similarity(s_rx, s_ry)
    total = projected.new_zeros(())
    for k in range(candidates.shape[0]):
        own = _cosine(projected, candidates[k])
        for negative in negatives[k]:
            total = total + torch.clamp(_cosine(projected, negative) - own, min=0.0)
    return total


@dataclass(frozen=True)
class MatchLosses:
    """Per-epoch mean stage-3 loss components."""

    l_match: float
    l_explanation: float
    l_contrastive: float

    def __post_init__(self) -> None:
        for name in ("l_match", "l_explanation", "l_contrastive"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite: {getattr(self, name)}")


def train_matcher(
    dataset: Sequence[CasePairRecord],
    extractor_outputs: Sequence[ExtractorOutput],
    config: TrainConfig,
) -> tuple[MatchPredictor, list[MatchLosses]]:
    """Train the matcher on stage-1 outputs; deterministic given the seed.

    Negatives for the contrastive loss are the same-hypothesis candidates of
    the other pairs in each mini-batch.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if len(dataset) != len(extractor_outputs):
        raise ValueError(
            f"need one extractor output per record: {len(extractor_outputs)} != {len(dataset)}"
        )
    for record, output in zip(dataset, extractor_outputs):
        if record.pair_id != output.pair_id:
            raise ValueError(
                f"record {record.pair_id} paired with output {output.pair_id}"
            )
        if record.match_label is None:
            raise ValueError(f"pair {record.pair_id} has no match label; cannot train")
    mode = parse_input_mode(config.input_mode)
    examples = [
        build_match_example(record, output, mode)
        for record, output in zip(dataset, extractor_outputs)
    ]
    tensors = [
        {
            "s_rx": torch.as_tensor(example.s_rx, dtype=DTYPE),
            "s_ry": torch.as_tensor(example.s_ry, dtype=DTYPE),
            "candidates": torch.as_tensor(example.candidates.copy(), dtype=DTYPE),
            "gold_label": example.gold_label,
            "gold_features": None
            if example.gold_features is None
            else torch.as_tensor(example.gold_features.copy(), dtype=DTYPE),
        }
        for example in examples
    ]
    predictor = build_matcher(config)
    optimizer = torch.optim.Adam(predictor.parameters(), lr=config.eta3)
    shuffler = np.random.default_rng(config.seed)
    trace: list[MatchLosses] = []
    for _ in range(config.epochs):
        order = shuffler.permutation(len(tensors))
        epoch = np.zeros(3)
        for start in range(0, len(order), config.n3):
            batch = [tensors[i] for i in order[start : start + config.n3]]
            l_match_terms, l_exp_terms, l_con_terms = [], [], []
            for position, item in enumerate(batch):
                scores = predictor.score_candidates(
                    item["s_rx"], item["s_ry"], item["candidates"]
                )
                distribution = predictor.head_distribution(scores)
                l_match_terms.append(loss_match(distribution, item["gold_label"]))
                if item["gold_features"] is not None:
                    l_exp_terms.append(
                        loss_explanation_fidelity(
                            predictor,
                            item["s_rx"],
                            item["s_ry"],
                            item["candidates"],
                            item["gold_features"],
                        )
                    )
                negatives = [
                    [other["candidates"][k] for j, other in enumerate(batch) if j != position]
                    for k in range(MATCH_CLASSES)
                ]
                l_con_terms.append(
                    loss_contrastive(
                        predictor, item["s_rx"], item["s_ry"], item["candidates"], negatives
                    )
                )
            l_m = torch.stack(l_match_terms).mean()
            l_e = (
                torch.stack(l_exp_terms).mean()
                if l_exp_terms
                else torch.zeros((), dtype=DTYPE)
            )
            l_c = torch.stack(l_con_terms).mean()
            loss = l_m + config.gamma3 * (l_e + l_c)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            batch_means = np.array(
                [l_m.detach().item(), l_e.detach().item(), l_c.detach().item()]
            )
            epoch += batch_means * len(batch)
        epoch /= len(tensors)
        trace.append(
            MatchLosses(l_match=epoch[0], l_explanation=epoch[1], l_contrastive=epoch[2])
        )
    return predictor, trace
