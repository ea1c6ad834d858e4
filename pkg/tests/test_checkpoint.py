import base64
import json

import pytest
import torch

from otalign.affinity import build_extractor
from otalign.checkpoint import (
    CheckpointError,
    checkpoint_bytes,
    load_checkpoint,
    load_extractor,
    load_matcher,
    save_checkpoint,
)
from otalign.core import TrainConfig
from otalign.matching import build_matcher


def small_config(**kwargs):
    base = dict(d=5, h=6, conv_layers=2, dilations=(1, 2), scorer_hidden=7, seed=3)
    base.update(kwargs)
    return TrainConfig(**base)


def assert_same_parameters(a, b):
    state_a, state_b = a.state_dict(), b.state_dict()
    assert set(state_a) == set(state_b)
    for name in state_a:
        assert torch.equal(state_a[name], state_b[name]), name


class TestRoundTrip:
    def test_extractor_round_trips_bit_exactly(self, tmp_path):
        config = small_config()
        extractor = build_extractor(config)
        path = save_checkpoint(extractor, config, "extractor", tmp_path / "e.json")
        loaded, loaded_config = load_extractor(path)
        assert loaded_config == config
        assert_same_parameters(extractor, loaded)

    def test_matcher_round_trips_bit_exactly(self, tmp_path):
        config = small_config(seed=9)
        matcher = build_matcher(config)
        path = save_checkpoint(matcher, config, "matcher", tmp_path / "m.json")
        loaded, loaded_config = load_matcher(path)
        assert loaded_config == config
        assert_same_parameters(matcher, loaded)

    def test_serialization_is_deterministic(self):
        config = small_config()
        extractor = build_extractor(config)
        assert checkpoint_bytes(extractor, config, "extractor") == checkpoint_bytes(
            extractor, config, "extractor"
        )

    def test_saved_file_equals_in_memory_bytes(self, tmp_path):
        config = small_config()
        extractor = build_extractor(config)
        path = save_checkpoint(extractor, config, "extractor", tmp_path / "e.json")
        assert path.read_bytes() == checkpoint_bytes(extractor, config, "extractor")

    def test_stored_tensors_override_initialization(self, tmp_path):
        """The stored tensors win over whatever the fresh build initialized."""
        config = small_config()
        extractor = build_extractor(config)
        with torch.no_grad():
            extractor.proj1.weight.add_(1.0)  # drift away from any fresh init
        path = save_checkpoint(extractor, config, "extractor", tmp_path / "e.json")
        loaded, _ = load_extractor(path)
        assert torch.equal(loaded.proj1.weight, extractor.proj1.weight)


def _tamper(path, mutate):
    document = json.loads(path.read_text())
    mutate(document)
    path.write_text(json.dumps(document))


class TestRejection:
    @pytest.fixture()
    def saved(self, tmp_path):
        config = small_config()
        extractor = build_extractor(config)
        return save_checkpoint(extractor, config, "extractor", tmp_path / "e.json")

    def test_unknown_kind_at_save_time(self):
        config = small_config()
        with pytest.raises(CheckpointError, match="kind"):
            checkpoint_bytes(build_extractor(config), config, "classifier")

    def test_kind_mismatch(self, saved):
        with pytest.raises(CheckpointError, match="kind"):
            load_matcher(saved)

    def test_wrong_version(self, saved):
        _tamper(saved, lambda d: d.update(version=99))
        with pytest.raises(CheckpointError, match="version"):
            load_extractor(saved)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text('{"hello": 1}')
        with pytest.raises(CheckpointError, match="not a"):
            load_extractor(path)

    def test_unparseable_file(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text("{{{")
        with pytest.raises(CheckpointError):
            load_extractor(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_extractor(tmp_path / "absent.json")

    def test_missing_tensor_rejected(self, saved):
        _tamper(saved, lambda d: d["tensors"].pop("proj1.weight"))
        with pytest.raises(CheckpointError, match="proj1.weight"):
            load_extractor(saved)

    def test_unexpected_tensor_rejected(self, saved):
        def mutate(document):
            document["tensors"]["intruder"] = document["tensors"]["proj1.weight"]

        _tamper(saved, mutate)
        with pytest.raises(CheckpointError, match="intruder"):
            load_extractor(saved)

    def test_shape_mismatch_rejected(self, saved):
        def mutate(document):
            entry = document["tensors"]["proj1.bias"]
            entry["shape"] = [entry["shape"][0] + 1]

        _tamper(saved, mutate)
        with pytest.raises(CheckpointError, match="bytes|shape"):
            load_extractor(saved)

    def test_reshaped_tensor_rejected(self, saved):
        """Same byte count, different shape: still refused."""

        def mutate(document):
            entry = document["tensors"]["proj1.weight"]
            entry["shape"] = list(reversed(entry["shape"]))

        _tamper(saved, mutate)
        with pytest.raises(CheckpointError, match="shape"):
            load_extractor(saved)

    def test_corrupt_payload_rejected(self, saved):
        def mutate(document):
            document["tensors"]["proj1.bias"]["data"] = base64.b64encode(b"abc").decode()

        _tamper(saved, mutate)
        with pytest.raises(CheckpointError, match="bytes"):
            load_extractor(saved)

    def test_invalid_base64_rejected(self, saved):
        _tamper(saved, lambda d: d["tensors"]["proj1.bias"].update(data="!!!"))
        with pytest.raises(CheckpointError, match="malformed"):
            load_extractor(saved)

    def test_config_architecture_governs_expected_shapes(self, saved):
        """Shrinking the stored config makes every stored tensor misfit."""
        _tamper(saved, lambda d: d["config"].update(h=3))
        with pytest.raises(CheckpointError):
            load_extractor(saved)

    def test_invalid_stored_config_rejected(self, saved):
        _tamper(saved, lambda d: d["config"].update(gamma=-1.0))
        with pytest.raises(CheckpointError, match="config"):
            load_extractor(saved)

    def test_generic_load_requires_known_kind(self, saved):
        with pytest.raises(CheckpointError, match="kind"):
            load_checkpoint(saved, "classifier")
