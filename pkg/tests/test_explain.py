import numpy as np
import pytest

from otalign.explain import (
    build_input_sequence,
    feature_length,
    parse_explanation_counts,
    render_explanation,
    type_token,
)
from otalign.extract import ConRationale, ExtractionResult, ProPair


def extraction(pro=(), con_x=(), con_y=()):
    return ExtractionResult(
        pro_pairs=tuple(ProPair(m=m, n=n, plan_mass=0.25, type_x=tx, type_y=ty)
                        for m, n, tx, ty in pro),
        con_x=tuple(ConRationale(index=i, rationale_type=t) for i, t in con_x),
        con_y=tuple(ConRationale(index=i, rationale_type=t) for i, t in con_y),
    )


EMPTY = extraction()


def embeddings(rows, d=4):
    rng = np.random.default_rng(0)
    return rng.normal(size=(rows, d))


class TestTypeToken:
    @pytest.mark.parametrize(
        "rationale_type,pro,token",
        [
            (1, True, "[AI]"), (1, False, "[AO]"),
            (2, True, "[YI]"), (2, False, "[YO]"),
            (3, True, "[ZI]"), (3, False, "[ZO]"),
        ],
    )
    def test_all_six_tokens(self, rationale_type, pro, token):
        assert type_token(rationale_type, pro) == token

    def test_non_rationale_type_rejected(self):
        with pytest.raises(ValueError):
            type_token(0, True)


class TestBuildInputSequence:
    def test_single_pro_pair(self):
        sequence = build_input_sequence(extraction(pro=[(2, 5, 1, 1)]))
        assert sequence == ("[AI]", "x_2", "[AI]", "y_5")

    def test_single_con_on_x(self):
        assert build_input_sequence(extraction(con_x=[(3, 2)])) == ("[YO]", "x_3")

    def test_empty_extraction_gives_empty_sequence(self):
        assert build_input_sequence(EMPTY) == ()

    def test_mixed_extraction_order_and_tokens(self):
        sequence = build_input_sequence(
            extraction(pro=[(0, 1, 3, 3)], con_x=[(2, 1)], con_y=[(0, 2)])
        )
        assert sequence == ("[ZI]", "x_0", "[ZI]", "y_1", "[AO]", "x_2", "[YO]", "y_0")


class TestRenderExplanation:
    def test_empty_extraction_mentions_no_aligned_rationales(self):
        record = render_explanation(EMPTY, 0, embeddings(3), embeddings(4))
        assert "no aligned rationales" in record.text
        assert "do not match" in record.text
        np.testing.assert_array_equal(record.features[:6], np.zeros(6))
        np.testing.assert_array_equal(record.features[6:9], [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(record.features[9:], np.zeros(8))

    def test_counts_appear_in_text_and_parse_back(self):
        ext = extraction(pro=[(0, 0, 1, 1), (1, 2, 2, 2)], con_y=[(1, 3)])
        record = render_explanation(ext, 2, embeddings(3), embeddings(4))
        assert "2 aligned rationale pairs" in record.text
        assert "1 unmatched rationale" in record.text
        assert "fully match" in record.text
        assert parse_explanation_counts(record.text) == (2, 1)

    def test_feature_counts_reconstruct_exactly(self):
        ext = extraction(pro=[(0, 0, 1, 1), (1, 2, 1, 1)], con_x=[(2, 3)], con_y=[(1, 3)])
        x, y = embeddings(3), embeddings(4)
        record = render_explanation(ext, 1, x, y)
        scale = len(x) + len(y)
        np.testing.assert_allclose(record.features[:3] * scale, [2, 0, 0], atol=1e-9)
        np.testing.assert_allclose(record.features[3:6] * scale, [0, 0, 2], atol=1e-9)

    def test_label_changes_only_the_one_hot_block(self):
        ext = extraction(pro=[(0, 1, 2, 2)], con_x=[(1, 1)])
        x, y = embeddings(3), embeddings(4)
        low = render_explanation(ext, 0, x, y)
        high = render_explanation(ext, 2, x, y)
        np.testing.assert_array_equal(low.features[:6], high.features[:6])
        np.testing.assert_array_equal(low.features[9:], high.features[9:])
        np.testing.assert_array_equal(low.features[6:9], [1, 0, 0])
        np.testing.assert_array_equal(high.features[6:9], [0, 0, 1])

    def test_differing_counts_give_different_features(self):
        x, y = embeddings(3), embeddings(4)
        one = render_explanation(extraction(pro=[(0, 0, 1, 1)]), 0, x, y)
        two = render_explanation(
            extraction(pro=[(0, 0, 1, 1), (1, 1, 1, 1)]), 0, x, y
        )
        con = render_explanation(
            extraction(pro=[(0, 0, 1, 1)], con_x=[(1, 2)]), 0, x, y
        )
        assert not np.array_equal(one.features, two.features)
        assert not np.array_equal(one.features, con.features)

    def test_pooled_blocks_average_the_right_sentences(self):
        x, y = embeddings(3), embeddings(4)
        ext = extraction(pro=[(0, 1, 1, 1)], con_x=[(2, 2)], con_y=[(3, 3)])
        record = render_explanation(ext, 1, x, y)
        np.testing.assert_allclose(record.features[9:13], (x[0] + y[1]) / 2.0, atol=1e-12)
        np.testing.assert_allclose(record.features[13:], (x[2] + y[3]) / 2.0, atol=1e-12)

    def test_feature_length_matches_declaration(self):
        record = render_explanation(EMPTY, 0, embeddings(2, d=7), embeddings(2, d=7))
        assert len(record.features) == feature_length(7) == 23

    def test_deterministic(self):
        ext = extraction(pro=[(0, 0, 3, 3)])
        x, y = embeddings(2), embeddings(2)
        first = render_explanation(ext, 1, x, y)
        second = render_explanation(ext, 1, x, y)
        assert first.text == second.text
        np.testing.assert_array_equal(first.features, second.features)

    def test_features_are_read_only(self):
        record = render_explanation(EMPTY, 0, embeddings(2), embeddings(2))
        with pytest.raises(ValueError):
            record.features[0] = 5.0

    def test_invalid_label_rejected(self):
        with pytest.raises(ValueError):
            render_explanation(EMPTY, 3, embeddings(2), embeddings(2))


class TestParseExplanationCounts:
    def test_no_aligned_phrase_parses_to_zero(self):
        record = render_explanation(EMPTY, 1, embeddings(2), embeddings(2))
        assert parse_explanation_counts(record.text) == (0, 0)

    def test_singular_counts_parse(self):
        ext = extraction(pro=[(0, 0, 1, 1)], con_x=[(1, 2)])
        record = render_explanation(ext, 0, embeddings(2), embeddings(2))
        assert parse_explanation_counts(record.text) == (1, 1)

    def test_foreign_text_rejected(self):
        with pytest.raises(ValueError):
            parse_explanation_counts("completely unrelated prose")
