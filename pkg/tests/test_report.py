import numpy as np
import pytest

from otalign.report import (
    SWEEP_RATIOS,
    render_heatmap,
    render_label_sweep,
    render_loss_curves,
)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def loss_rows(n=4):
    return [
        {"epoch": i + 1, "l_rationale": 1.0 / (i + 1), "l_alignment": 0.5 / (i + 1), "total": 1.5 / (i + 1)}
        for i in range(n)
    ]


def sweep_rows():
    rows = []
    for ratio in SWEEP_RATIOS:
        for seed in (0, 1):
            rows.append({"ratio": ratio, "seed": seed, "f1": 0.5 + 0.4 * ratio + 0.01 * seed})
    return rows


class TestLossCurves:
    def test_writes_a_png(self, tmp_path):
        path = render_loss_curves(
            loss_rows(), ["l_rationale", "l_alignment", "total"], tmp_path / "loss.png", "loss"
        )
        assert path.read_bytes().startswith(PNG_SIGNATURE)

    def test_empty_rows_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            render_loss_curves([], ["total"], tmp_path / "loss.png", "loss")

    def test_rendering_is_byte_deterministic(self, tmp_path):
        a = render_loss_curves(loss_rows(), ["total"], tmp_path / "a.png", "loss")
        b = render_loss_curves(loss_rows(), ["total"], tmp_path / "b.png", "loss")
        assert a.read_bytes() == b.read_bytes()


class TestLabelSweep:
    def test_writes_a_png(self, tmp_path):
        path = render_label_sweep(sweep_rows(), tmp_path / "sweep.png")
        assert path.read_bytes().startswith(PNG_SIGNATURE)

    def test_empty_rows_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            render_label_sweep([], tmp_path / "sweep.png")

    def test_rendering_is_byte_deterministic(self, tmp_path):
        a = render_label_sweep(sweep_rows(), tmp_path / "a.png")
        b = render_label_sweep(sweep_rows(), tmp_path / "b.png")
        assert a.read_bytes() == b.read_bytes()


class TestHeatmap:
    def test_writes_a_png(self, tmp_path):
        rng = np.random.default_rng(0)
        plan = rng.random((4, 5))
        plan /= plan.sum()
        path = render_heatmap(
            plan, np.array([1, 0, 2, 0]), np.array([0, 1, 1, 0, 3]), 0.05,
            tmp_path / "plan.png", "pair-00000",
        )
        assert path.read_bytes().startswith(PNG_SIGNATURE)

    def test_non_matrix_plan_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            render_heatmap(np.ones(3), np.ones(3), np.ones(3), 0.1, tmp_path / "p.png", "x")
