from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from cosal import ImageRecord, SaliencyMap
from cosal.fixtures import build_planted_fixture


def make_image(image_id="img", group_id="grp", h=8, w=8, value=100):
    pixels = np.full((h, w, 3), value, dtype=np.uint8)
    return ImageRecord(image_id=image_id, group_id=group_id, pixel_data=pixels,
                       height=h, width=w)


def make_saliency(values, image_id="img", group_id="grp"):
    return SaliencyMap(values=np.asarray(values, dtype=np.float64),
                       image_id=image_id, group_id=group_id)


def write_png(path, array):
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(array, dtype=np.uint8)
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path)


@pytest.fixture
def tiny_dataset(tmp_path):
    """Two groups (axe: a, b; bear: c) with matching GT masks."""
    root = tmp_path / "data"
    gt = tmp_path / "gt"
    rng = np.random.default_rng(0)
    for group, stems in (("axe", ["a", "b"]), ("bear", ["c"])):
        for stem in stems:
            write_png(root / group / f"{stem}.jpg",
                      rng.integers(0, 255, size=(6, 5, 3)))
            mask = np.zeros((6, 5), dtype=np.uint8)
            mask[2:4, 1:4] = 255
            write_png(gt / group / f"{stem}.png", mask)
    return root, gt


@pytest.fixture(scope="session")
def planted_fixture(tmp_path_factory):
    """The bundled 5-groups x 4-images planted fixture (noise 0)."""
    root = tmp_path_factory.mktemp("planted")
    return build_planted_fixture(root, n_groups=5, images_per_group=4,
                                 grid=(16, 16), channels=8, image_scale=4,
                                 noise_amplitude=0.0, seed=7)
