from __future__ import annotations

import numpy as np
import pytest

from cosal import ConfigurationError, DiffusionBackendConfig, combine_group_layers
from cosal.backends.diffusion import DiffusionBackend, _image_noise_seed


class TestConfigValidation:
    def test_defaults(self):
        cfg = DiffusionBackendConfig()
        assert cfg.timestep == 50
        assert cfg.unet_decoder_layers == (2, 5, 8)
        assert cfg.pca_dims_per_layer == 256

    def test_layers_must_be_sorted_distinct(self):
        with pytest.raises(ValueError, match="ascending"):
            DiffusionBackendConfig(unet_decoder_layers=(5, 2, 8))
        with pytest.raises(ValueError, match="ascending"):
            DiffusionBackendConfig(unet_decoder_layers=(2, 2, 8))
        with pytest.raises(ValueError, match="1-based"):
            DiffusionBackendConfig(unet_decoder_layers=(0, 3))

    def test_negative_timestep_rejected(self):
        with pytest.raises(ValueError, match="timestep"):
            DiffusionBackendConfig(timestep=-1)


def layer_stack(rng, n_images, channels, h, w):
    return [rng.normal(size=(channels, h, w)) for _ in range(n_images)]


class TestCombineGroupLayers:
    def test_default_geometry_gives_768_channels(self):
        # Three layers reduced to 256 dims each, concatenated at the finest
        # layer's resolution.
        rng = np.random.default_rng(0)
        stacks = [layer_stack(rng, 2, 320, 12, 12),
                  layer_stack(rng, 2, 280, 16, 16),
                  layer_stack(rng, 2, 260, 24, 24)]
        combined = combine_group_layers(stacks, pca_dims=256)
        assert len(combined) == 2
        assert all(m.shape == (768, 24, 24) for m in combined)

    def test_pca_dims_clamped_by_channels(self):
        rng = np.random.default_rng(1)
        stacks = [layer_stack(rng, 2, 5, 4, 4)]
        combined = combine_group_layers(stacks, pca_dims=256)
        assert combined[0].shape == (5, 4, 4)  # k = min(256, pixels-1, 5)

    def test_shared_basis_across_images(self):
        # Identical images get identical reduced features: the PCA basis is
        # fitted on the concatenated group pixels, not per image.
        rng = np.random.default_rng(2)
        base = rng.normal(size=(6, 5, 5))
        stacks = [[base.copy(), base.copy()]]
        combined = combine_group_layers(stacks, pca_dims=3)
        assert np.array_equal(combined[0], combined[1])

    def test_deterministic(self):
        rng_a = np.random.default_rng(3)
        rng_b = np.random.default_rng(3)
        a = combine_group_layers([layer_stack(rng_a, 3, 8, 6, 6)], 4)
        b = combine_group_layers([layer_stack(rng_b, 3, 8, 6, 6)], 4)
        for ma, mb in zip(a, b):
            assert np.array_equal(ma, mb)

    def test_shape_disagreement_rejected(self):
        rng = np.random.default_rng(4)
        stacks = [[rng.normal(size=(4, 4, 4)), rng.normal(size=(4, 5, 5))]]
        with pytest.raises(ValueError, match="disagree"):
            combine_group_layers(stacks, 2)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            combine_group_layers([], 2)


class TestNoiseSeeding:
    def test_stable_per_image(self):
        a = _image_noise_seed(7, "group", "img")
        b = _image_noise_seed(7, "group", "img")
        assert a == b

    def test_distinct_across_images_and_seeds(self):
        base = _image_noise_seed(7, "g", "a")
        assert _image_noise_seed(7, "g", "b") != base
        assert _image_noise_seed(8, "g", "a") != base


class TestBackendWithoutWeights:
    def test_missing_dependency_is_config_error(self, monkeypatch):
        monkeypatch.delenv("COSAL_SD_MODEL", raising=False)
        backend = DiffusionBackend(model_ref="/nonexistent/model")
        with pytest.raises(ConfigurationError):
            backend.ensure_ready()
