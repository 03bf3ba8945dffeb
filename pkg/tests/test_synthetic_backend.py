from __future__ import annotations

import numpy as np
import pytest

from cosal import SyntheticGroupSpec, load_synthetic_specs, synthetic_extract
from cosal.backends.synthetic import (planted_mask_grid, planted_mask_image,
                                      save_synthetic_specs)


def make_spec(noise=0.0, seed=3):
    common = np.array([1.0, 0.0, 0.0])
    background = np.array([0.0, 0.2, 0.0])
    return SyntheticGroupSpec(
        group_id="g", grid_h=4, grid_w=4, channels=3,
        common_embedding=common, background_embedding=background,
        planted_regions={"a": (1, 1, 2, 2), "b": (0, 0, 1, 1)},
        noise_amplitude=noise, seed=seed)


class TestSpecValidation:
    def test_rect_must_fit_grid(self):
        with pytest.raises(ValueError, match="outside"):
            SyntheticGroupSpec(group_id="g", grid_h=4, grid_w=4, channels=2,
                               common_embedding=np.array([1.0, 0.0]),
                               background_embedding=np.array([0.0, 1.0]),
                               planted_regions={"a": (2, 2, 4, 3)})

    def test_embeddings_must_differ(self):
        with pytest.raises(ValueError, match="differ"):
            SyntheticGroupSpec(group_id="g", grid_h=4, grid_w=4, channels=2,
                               common_embedding=np.array([1.0, 0.0]),
                               background_embedding=np.array([1.0, 0.0]),
                               planted_regions={"a": (0, 0, 1, 1)})


class TestSyntheticExtract:
    def test_noise_free_values_exact(self):
        spec = make_spec(noise=0.0)
        fmap = synthetic_extract(spec)[0]  # image "a", rect (1,1)-(2,2)
        planted = planted_mask_grid((1, 1, 2, 2), (4, 4))
        assert fmap.values.shape == (3, 4, 4)
        common = spec.common_embedding.astype(np.float32)
        background = spec.background_embedding.astype(np.float32)
        for r in range(4):
            for c in range(4):
                expected = common if planted[r, c] else background
                assert np.array_equal(fmap.values[:, r, c], expected)

    def test_planted_cell_count(self):
        fmap = synthetic_extract(make_spec())[0]
        common_cells = (fmap.values[0] == 1.0).sum()
        assert common_cells == 4  # (1,1)-(2,2) inclusive

    def test_same_seed_bit_identical(self):
        a = synthetic_extract(make_spec(noise=0.5, seed=9))
        b = synthetic_extract(make_spec(noise=0.5, seed=9))
        for ma, mb in zip(a, b):
            assert ma.values.tobytes() == mb.values.tobytes()

    def test_different_seed_differs(self):
        a = synthetic_extract(make_spec(noise=0.5, seed=1))[0]
        b = synthetic_extract(make_spec(noise=0.5, seed=2))[0]
        assert not np.array_equal(a.values, b.values)


class TestSpecSerialization:
    def test_json_roundtrip(self, tmp_path):
        spec = make_spec(noise=0.25, seed=12)
        save_synthetic_specs({"g": spec}, tmp_path / "spec.json")
        loaded = load_synthetic_specs(tmp_path / "spec.json")["g"]
        assert loaded.planted_regions == spec.planted_regions
        assert np.array_equal(loaded.common_embedding, spec.common_embedding)
        assert loaded.noise_amplitude == 0.25
        assert loaded.seed == 12


class TestPlantedMaskImage:
    def test_identity_scale(self):
        mask = planted_mask_image((1, 1, 2, 2), (4, 4), (4, 4))
        assert np.array_equal(mask, planted_mask_grid((1, 1, 2, 2), (4, 4)))

    def test_integer_upscale(self):
        mask = planted_mask_image((1, 1, 2, 2), (4, 4), (8, 8))
        assert mask.sum() == 4 * 4  # each grid cell covers 2x2 pixels
        assert mask[2:6, 2:6].all()
        assert not mask[0:2].any()

    def test_pixel_membership_follows_cell(self):
        mask = planted_mask_image((0, 0, 0, 0), (3, 3), (10, 10))
        # pixel belongs iff floor(p * 3 / 10) == 0  ->  p in [0, 3]
        assert mask[:4, :4].all()
        assert not mask[4:, :].any() and not mask[:, 4:].any()
