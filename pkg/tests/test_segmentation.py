from __future__ import annotations

import numpy as np
import pytest

from cosal import (ConfigurationError, OracleSegmenter, PromptPoint, SamSegmenter,
                   SegmenterResult, oracle_segment, select_mask)

from conftest import make_image


def region(h, w, rows, cols):
    mask = np.zeros((h, w), dtype=bool)
    mask[rows, cols] = True
    return mask


class TestSelectMask:
    def test_highest_score_wins(self):
        masks = [region(4, 4, slice(0, 1), slice(None)),
                 region(4, 4, slice(1, 2), slice(None)),
                 region(4, 4, slice(2, 3), slice(None))]
        result = SegmenterResult(image_id="i", group_id="g",
                                 candidate_masks=masks,
                                 quality_scores=[0.2, 0.9, 0.5])
        out = select_mask(result)
        assert np.array_equal(out.values, masks[1].astype(float))

    def test_single_candidate(self):
        mask = region(3, 3, 1, 1)
        result = SegmenterResult(image_id="i", group_id="g",
                                 candidate_masks=[mask], quality_scores=[0.4])
        assert np.array_equal(select_mask(result).values, mask.astype(float))

    def test_tie_takes_first(self):
        first = region(3, 3, 0, 0)
        second = region(3, 3, 2, 2)
        result = SegmenterResult(image_id="i", group_id="g",
                                 candidate_masks=[first, second],
                                 quality_scores=[0.7, 0.7])
        assert np.array_equal(select_mask(result).values, first.astype(float))

    def test_values_exactly_binary(self):
        mask = region(5, 5, slice(1, 3), slice(2, 4))
        result = SegmenterResult(image_id="i", group_id="g",
                                 candidate_masks=[mask], quality_scores=[1.0])
        values = select_mask(result).values
        assert set(np.unique(values)) <= {0.0, 1.0}

    def test_no_candidates_rejected(self):
        with pytest.raises(ValueError, match="no candidates"):
            SegmenterResult(image_id="i", group_id="g",
                            candidate_masks=[], quality_scores=[])


class TestOracleSegment:
    def test_prompt_inside_single_region(self):
        image = make_image(h=6, w=6)
        a = region(6, 6, slice(0, 2), slice(0, 2))
        b = region(6, 6, slice(4, 6), slice(4, 6))
        result = oracle_segment(image, [PromptPoint(1, 1, 1.0)], [a, b])
        assert np.array_equal(result.candidate_masks[0], a)
        assert result.quality_scores == [1.0]

    def test_prompts_in_two_regions_union(self):
        image = make_image(h=6, w=6)
        a = region(6, 6, slice(0, 2), slice(0, 2))
        b = region(6, 6, slice(4, 6), slice(4, 6))
        result = oracle_segment(image, [PromptPoint(1, 1, 1.0),
                                        PromptPoint(5, 5, 0.9)], [a, b])
        assert np.array_equal(result.candidate_masks[0], a | b)

    def test_miss_returns_empty_zero_score(self):
        image = make_image(h=6, w=6)
        a = region(6, 6, slice(0, 2), slice(0, 2))
        result = oracle_segment(image, [PromptPoint(3, 3, 1.0)], [a])
        assert not result.candidate_masks[0].any()
        assert result.quality_scores == [0.0]

    def test_does_not_mutate_inputs(self):
        image = make_image(h=6, w=6)
        before = image.pixel_data.copy()
        a = region(6, 6, slice(0, 2), slice(0, 2))
        a_before = a.copy()
        prompts = [PromptPoint(1, 1, 1.0)]
        oracle_segment(image, prompts, [a])
        assert np.array_equal(image.pixel_data, before)
        assert np.array_equal(a, a_before)
        assert prompts == [PromptPoint(1, 1, 1.0)]

    def test_out_of_bounds_prompt_rejected(self):
        image = make_image(h=4, w=4)
        with pytest.raises(ValueError, match="outside"):
            oracle_segment(image, [PromptPoint(9, 0, 1.0)], [region(4, 4, 0, 0)])


class TestOracleSegmenter:
    def test_lookup_by_group_and_image(self):
        image = make_image(image_id="a", group_id="g", h=5, w=5)
        planted = region(5, 5, slice(1, 3), slice(1, 3))
        segmenter = OracleSegmenter(regions={("g", "a"): [planted]})
        segmenter.ensure_ready()
        result = segmenter.segment(image, [PromptPoint(1, 1, 1.0)])
        assert np.array_equal(result.candidate_masks[0], planted)

    def test_empty_lookup_is_config_error(self):
        with pytest.raises(ConfigurationError):
            OracleSegmenter(regions={}).ensure_ready()


class TestSamSegmenter:
    def test_missing_package_or_checkpoint_is_config_error(self, tmp_path,
                                                           monkeypatch):
        monkeypatch.delenv("COSAL_SAM_CHECKPOINT", raising=False)
        segmenter = SamSegmenter(checkpoint=tmp_path / "absent.pth")
        with pytest.raises(ConfigurationError):
            segmenter.ensure_ready()

    def test_env_var_resolution(self, monkeypatch):
        monkeypatch.setenv("COSAL_SAM_CHECKPOINT", "/weights/sam.pth")
        assert SamSegmenter().resolved_checkpoint() == "/weights/sam.pth"
