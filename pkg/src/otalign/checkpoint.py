"""Versioned parameter checkpoints for the extractor and the matcher.

A checkpoint is a single JSON document holding the training configuration
and every named parameter tensor (float64, little-endian, base64-encoded).
The representation is canonical — sorted keys, fixed separators — so the
same model always serializes to the same bytes.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np
import torch

from .affinity import RationaleExtractor, build_extractor
from .core import TrainConfig
from .ioutil import write_bytes_atomic
from .matching import MatchPredictor, build_matcher

FORMAT_NAME = "otalign-checkpoint"
FORMAT_VERSION = 1

_BUILDERS = {
    "extractor": build_extractor,
    "matcher": build_matcher,
}


class CheckpointError(ValueError):
    """Raised when a checkpoint file cannot be decoded or does not fit."""


def _encode_tensor(tensor: torch.Tensor) -> dict:
    array = tensor.detach().numpy().astype("<f8")
    return {
        "shape": list(array.shape),
        "data": base64.b64encode(array.tobytes(order="C")).decode("ascii"),
    }


def _decode_tensor(name: str, payload: dict) -> torch.Tensor:
    try:
        shape = tuple(int(s) for s in payload["shape"])
        raw = base64.b64decode(payload["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"tensor '{name}' is malformed: {exc}") from exc
    expected = int(np.prod(shape, dtype=np.int64)) * 8
    if len(raw) != expected:
        raise CheckpointError(
            f"tensor '{name}' has {len(raw)} payload bytes, expected {expected}"
        )
    array = np.frombuffer(raw, dtype="<f8").reshape(shape)
    return torch.from_numpy(array.copy())


def checkpoint_bytes(model: torch.nn.Module, config: TrainConfig, kind: str) -> bytes:
    """Serialize a model to the canonical checkpoint byte string."""
    if kind not in _BUILDERS:
        raise CheckpointError(f"unknown checkpoint kind '{kind}'")
    document = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": kind,
        "config": config.to_dict(),
        "tensors": {
            name: _encode_tensor(tensor)
            for name, tensor in model.state_dict().items()
        },
    }
    text = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return text.encode("ascii") + b"\n"


def save_checkpoint(
    model: torch.nn.Module, config: TrainConfig, kind: str, path: str | Path
) -> Path:
    path = Path(path)
    write_bytes_atomic(path, checkpoint_bytes(model, config, kind))
    return path


def load_checkpoint(path: str | Path, kind: str) -> tuple[torch.nn.Module, TrainConfig]:
    """Rebuild a model of the requested kind from a checkpoint file.

    The stored tensor names and shapes must match the architecture implied
    by the stored config exactly; anything else is rejected.
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="ascii"))
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(document, dict) or document.get("format") != FORMAT_NAME:
        raise CheckpointError(f"{path} is not a {FORMAT_NAME} file")
    if document.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {document.get('version')!r}"
        )
    if document.get("kind") != kind:
        raise CheckpointError(
            f"checkpoint kind is '{document.get('kind')}', expected '{kind}'"
        )
    try:
        config = TrainConfig.from_dict(document["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid stored config: {exc}") from exc

    model = _BUILDERS[kind](config)
    state = model.state_dict()
    stored = document.get("tensors")
    if not isinstance(stored, dict):
        raise CheckpointError("checkpoint has no tensor table")
    missing = sorted(set(state) - set(stored))
    extra = sorted(set(stored) - set(state))
    if missing or extra:
        raise CheckpointError(
            f"tensor names do not match the architecture "
            f"(missing: {missing}, unexpected: {extra})"
        )
    new_state = {}
    for name, tensor in state.items():
        decoded = _decode_tensor(name, stored[name])
        if tuple(decoded.shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"tensor '{name}' has shape {tuple(decoded.shape)}, "
                f"expected {tuple(tensor.shape)}"
            )
        new_state[name] = decoded
    model.load_state_dict(new_state)
    return model, config


def load_extractor(path: str | Path) -> tuple[RationaleExtractor, TrainConfig]:
    model, config = load_checkpoint(path, "extractor")
    return model, config  # type: ignore[return-value]


def load_matcher(path: str | Path) -> tuple[MatchPredictor, TrainConfig]:
    model, config = load_checkpoint(path, "matcher")
    return model, config  # type: ignore[return-value]
