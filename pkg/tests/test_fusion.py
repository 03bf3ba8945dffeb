from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cosal import FeatureMap, fuse, l2_normalize_pixelwise


def fmap(values, image=(8, 8)):
    values = np.asarray(values, dtype=np.float64)
    c, h, w = values.shape
    return FeatureMap(values=values, grid_h=h, grid_w=w,
                      image_h=image[0], image_w=image[1], backend_id="t")


class TestL2Normalize:
    def test_three_four_pixel(self):
        out = l2_normalize_pixelwise(fmap([[[3.0]], [[4.0]]]))
        assert out.values[:, 0, 0] == pytest.approx([0.6, 0.8], abs=1e-12)

    def test_unit_vector_unchanged(self):
        values = np.zeros((3, 2, 2))
        values[1] = 1.0
        out = l2_normalize_pixelwise(fmap(values))
        assert np.array_equal(out.values, values)

    def test_zero_vector_stays_zero(self):
        values = np.zeros((4, 2, 2))
        values[:, 0, 0] = [1.0, 0.0, 0.0, 0.0]
        out = l2_normalize_pixelwise(fmap(values))
        assert not out.values[:, 1, 1].any()
        assert np.isfinite(out.values).all()

    def test_non_finite_identifies_pixel(self):
        m = fmap(np.ones((2, 3, 3)))
        m.values[1, 2, 1] = np.nan
        with pytest.raises(ValueError, match=r"channel 1.*\(2, 1\)"):
            l2_normalize_pixelwise(m)


class TestFuse:
    def test_normalize_then_concat(self):
        low = fmap(np.full((1, 2, 2), 2.0))
        high = fmap(np.full((1, 2, 2), -3.0))
        fused = fuse(low, high)
        assert fused.values[:, 0, 0] == pytest.approx([1.0, -1.0], abs=1e-12)
        assert fused.source_channel_split == (1, 1)

    def test_zero_pixels_fuse_to_zero(self):
        low_values = np.ones((2, 2, 2))
        low_values[:, 0, 0] = 0.0
        high_values = np.ones((3, 2, 2))
        high_values[:, 0, 0] = 0.0
        fused = fuse(fmap(low_values), fmap(high_values))
        assert not fused.values[:, 0, 0].any()

    def test_norm_sqrt2_when_both_nonzero(self):
        rng = np.random.default_rng(0)
        low = fmap(rng.normal(size=(5, 4, 4)) + 0.1)
        high = fmap(rng.normal(size=(7, 4, 4)) + 0.1)
        fused = fuse(low, high)
        norms = np.linalg.norm(fused.values, axis=0)
        assert np.abs(norms - np.sqrt(2.0)).max() < 1e-6

    def test_grid_mismatch_reports_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(1, 2, 2\).*\(1, 3, 3\)"):
            fuse(fmap(np.ones((1, 2, 2))), fmap(np.ones((1, 3, 3))))

    def test_high_only_ablation_equals_normalized(self):
        rng = np.random.default_rng(4)
        high = fmap(rng.normal(size=(6, 5, 5)))
        fused = fuse(None, high)
        assert np.array_equal(fused.values, l2_normalize_pixelwise(high).values)
        assert fused.source_channel_split == (0, 6)

    def test_split_sums_to_channels(self):
        fused = fuse(fmap(np.ones((2, 3, 3))), fmap(np.ones((5, 3, 3))))
        assert sum(fused.source_channel_split) == fused.channels == 7

    @settings(deadline=None, max_examples=25)
    @given(st.integers(0, 2 ** 31 - 1), st.floats(0.01, 100.0))
    def test_per_source_scale_invariance(self, seed, scale):
        rng = np.random.default_rng(seed)
        low_values = rng.normal(size=(3, 4, 4))
        high = fmap(rng.normal(size=(2, 4, 4)))
        field = rng.uniform(0.5, 2.0, size=(1, 4, 4)) * scale
        base = fuse(fmap(low_values), high)
        scaled = fuse(fmap(low_values * field), high)
        assert np.abs(base.values - scaled.values).max() < 1e-6
