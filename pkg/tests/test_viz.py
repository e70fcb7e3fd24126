import json

import numpy as np
from PIL import Image

from dfadepth.viz import visualize_depth, visualize_depth_gap, visualize_features


def _png(path):
    return np.asarray(Image.open(path))


def test_constant_depth_uniform(tmp_path):
    visualize_depth(np.full((8, 8), 12.0), tmp_path / "d.png")
    assert len(np.unique(_png(tmp_path / "d.png"))) == 1


def test_two_level_depth(tmp_path):
    d = np.full((8, 8), 40.0)
    d[:, :4] = 5.0
    visualize_depth(d, tmp_path / "d.png")
    img = _png(tmp_path / "d.png")
    assert img.ndim == 2
    assert len(np.unique(img)) == 2
    assert img[0, 0] > img[0, 7]


def test_depth_png_byte_identical(tmp_path):
    d = np.random.default_rng(0).uniform(2, 50, (16, 16))
    visualize_depth(d, tmp_path / "a.png")
    visualize_depth(d, tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_gap_images(tmp_path):
    d = np.random.default_rng(1).uniform(2, 50, (8, 8))
    visualize_depth_gap(d, d, tmp_path / "zero.png")
    assert _png(tmp_path / "zero.png").max() == 0

    e = d.copy()
    e[3, 5] += 7.0
    visualize_depth_gap(d, e, tmp_path / "one.png")
    visualize_depth_gap(e, d, tmp_path / "swap.png")
    img = _png(tmp_path / "one.png")
    assert np.count_nonzero(img) == 1 and img[3, 5] == 255
    assert np.array_equal(img, _png(tmp_path / "swap.png"))


def test_features_clean_vs_clean(tmp_path, fresh_model, scene):
    stats = visualize_features(fresh_model, scene, scene, tmp_path)
    for lid in fresh_model.tap_spec.layer_ids:
        assert (tmp_path / f"{lid}_clean.png").read_bytes() == (tmp_path / f"{lid}_attacked.png").read_bytes()
        assert stats[lid]["var_product_clean"] == stats[lid]["var_product_attacked"]
    assert json.loads((tmp_path / "feature_variance.json").read_text()) == stats


def test_features_zero_input_no_nan(tmp_path, fresh_model):
    zero = np.zeros((96, 128, 3), np.float32)
    stats = visualize_features(fresh_model, zero, zero, tmp_path)
    assert all(np.isfinite(v) for s in stats.values() for v in s.values())
    for lid in fresh_model.tap_spec.layer_ids:
        assert np.all(np.isfinite(_png(tmp_path / f"{lid}_clean.png")))
