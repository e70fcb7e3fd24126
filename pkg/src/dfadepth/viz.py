"""PNG renderings of depth maps, depth gaps and per-layer feature maps."""

import json
import os

import numpy as np

from ._io import save_png
from ._validation import check_image
from .errors import ShapeError
from .model import forward


def _minmax(arr):
    lo, hi = float(np.min(arr)), float(np.max(arr))
    if not hi > lo:
        return np.zeros(np.shape(arr))
    return (arr - lo) / (hi - lo)


def _data(depth):
    return np.asarray(getattr(depth, "data", depth), dtype=np.float64)


def depth_to_gray(depth):
    """Inverse depth min-max normalized over the image, so near pixels are bright."""
    return _minmax(1.0 / _data(depth))


def visualize_depth(depth, path):
    return save_png(path, depth_to_gray(depth))


def depth_gap(clean, attacked):
    c, a = _data(clean), _data(attacked)
    if c.shape != a.shape:
        raise ShapeError(f"clean {c.shape} vs attacked {a.shape}")
    gap = np.abs(c - a)
    peak = gap.max()
    return gap / peak if peak > 0 else np.zeros_like(gap)


def visualize_depth_gap(clean, attacked, path):
    return save_png(path, depth_gap(clean, attacked))


def feature_statistics(clean, attacked):
    """Per-layer activation variances and product variances for two feature bundles."""
    stats = {}
    for lid, c in clean.items():
        a = attacked[lid].astype(np.float64)
        c = c.astype(np.float64)
        stats[lid] = {
            "var_clean": float(c.var()),
            "var_attacked": float(a.var()),
            "var_product_clean": float((c * c).var()),
            "var_product_attacked": float((c * a).var()),
        }
    return stats


def visualize_features(model, image, attacked, out_dir):
    """Channel-mean activation maps of every tapped layer for both inputs.

    Writes ``<layer>_clean.png`` / ``<layer>_attacked.png`` and
    ``feature_variance.json`` into ``out_dir``; returns the statistics dict.
    """
    image = check_image(image, expected_shape=model.input_shape)
    attacked = check_image(attacked, expected_shape=model.input_shape, name="attacked")
    os.makedirs(out_dir, exist_ok=True)
    _, f_clean = forward(model, image, capture_features=True)
    _, f_adv = forward(model, attacked, capture_features=True)
    for lid in model.tap_spec.layer_ids:
        for tag, bundle in (("clean", f_clean), ("attacked", f_adv)):
            save_png(os.path.join(out_dir, f"{lid}_{tag}.png"), _minmax(bundle[lid].mean(axis=0)))
    stats = feature_statistics(f_clean, f_adv)
    with open(os.path.join(out_dir, "feature_variance.json"), "w") as f:
        json.dump(stats, f, indent=2)
        f.write("\n")
    return stats
