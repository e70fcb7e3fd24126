import numpy as np
import pytest

from dfadepth.data import (BILLBOARD_DEPTH, FAR_DEPTH, NEAR_DEPTH, generate_scenes, load_dataset,
                           render_scene, save_dataset)
from dfadepth.errors import ShapeError


def test_same_seed_same_bytes():
    a = generate_scenes("A", 1, seed=0)
    b = generate_scenes("A", 1, seed=0)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.depths.tobytes() == b.depths.tobytes()


def test_distributions_differ():
    a = generate_scenes("A", 2, seed=0)
    b = generate_scenes("B", 2, seed=0)
    assert not np.array_equal(a.images, b.images)


@pytest.mark.parametrize("dist", ["A", "B"])
def test_depth_within_scene_bounds(dist):
    ds = generate_scenes(dist, 20, seed=5)
    assert ds.depths.min() >= NEAR_DEPTH
    assert ds.depths.max() <= FAR_DEPTH
    assert ds.images.min() >= 0 and ds.images.max() <= 1


def test_nearer_billboard_wins_overlap():
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(200):
        _, depth, boards = render_scene(rng, (96, 128), "A")
        for i, b1 in enumerate(boards):
            for b2 in boards[i + 1:]:
                top, bottom = max(b1.top, b2.top), min(b1.bottom, b2.bottom)
                left, right = max(b1.left, b2.left), min(b1.right, b2.right)
                if top > bottom or left > right:
                    continue
                covering = [b.depth for b in boards
                            if b.top <= top <= b.bottom and b.left <= left <= b.right]
                assert depth[top, left] == pytest.approx(min(covering), rel=1e-6)
                checked += 1
    assert checked > 20


def test_billboard_depths_in_range():
    rng = np.random.default_rng(2)
    for _ in range(50):
        _, _, boards = render_scene(rng, (96, 128), "B")
        assert 3 <= len(boards) <= 8
        assert all(BILLBOARD_DEPTH[0] <= b.depth <= BILLBOARD_DEPTH[1] for b in boards)


@pytest.mark.parametrize("shape", [(90, 128), (16, 16), (96,)])
def test_invalid_shape(shape):
    with pytest.raises(ShapeError):
        generate_scenes("A", 1, shape)


def test_invalid_count_and_dist():
    with pytest.raises(ValueError):
        generate_scenes("A", 0)
    with pytest.raises(ValueError):
        generate_scenes("C", 1)


def test_saved_dataset_equals_regenerated(tmp_path):
    ds = generate_scenes("B", 4, seed=9)
    save_dataset(ds, tmp_path)
    loaded = load_dataset(tmp_path)
    manifest = loaded.manifest()
    again = generate_scenes(manifest["distribution_id"], manifest["count"],
                            manifest["image_shape"], manifest["seed"])
    assert np.array_equal(loaded.images, again.images)
    assert np.array_equal(loaded.depths, again.depths)
