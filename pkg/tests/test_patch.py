import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from dfadepth.errors import ArtifactFormatError, ShapeError
from dfadepth.patch import (AdversarialPatchAttack, PatchArtifact, Placement, _place_torch,
                            apply_patch_batch, load_patch, patch_side_for_fraction, place_patch,
                            sample_placement, save_patch, train_patch)
from dfadepth.perturbation import AttackConfig, PerturbationArtifact, save_perturbation


def _patch(side, seed=0):
    return PatchArtifact(np.random.default_rng(seed).random((side, side, 3)).astype(np.float32))


def test_top_left_block():
    img = np.zeros((32, 32, 3), np.float32)
    patch = PatchArtifact(np.ones((2, 2, 3), np.float32))
    out, mask = place_patch(img, patch, Placement(0, 0, 0))
    changed = np.any(out != img, axis=2)
    assert changed.sum() == 4 and changed[:2, :2].all()
    assert np.array_equal(mask, changed)


def test_rotation_180():
    beta = np.arange(3 * 3 * 3, dtype=np.float32).reshape(3, 3, 3) / 27
    img = np.zeros((32, 32, 3), np.float32)
    out, _ = place_patch(img, PatchArtifact(beta), Placement(5, 7, 2))
    block = out[7:10, 5:8]
    for i in range(3):
        for j in range(3):
            assert np.array_equal(block[2 - i, 2 - j], beta[i, j])


def test_out_of_bounds_rejected():
    img = np.zeros((32, 48, 3), np.float32)
    with pytest.raises(ShapeError):
        place_patch(img, _patch(4), Placement(48 - 4 + 1, 0, 0))
    with pytest.raises(ShapeError):
        place_patch(img, _patch(4), Placement(0, -1, 0))


def test_torch_placement_matches_numpy():
    img = np.random.default_rng(0).random((32, 48, 3)).astype(np.float32)
    patch = _patch(5)
    for k in range(4):
        pl = Placement(3, 9, k)
        ref, _ = place_patch(img, patch, pl)
        x = torch.from_numpy(img.transpose(2, 0, 1).copy())[None]
        beta = torch.from_numpy(patch.beta.transpose(2, 0, 1).copy())
        got = _place_torch(x, beta, pl)[0].numpy().transpose(1, 2, 0)
        assert np.array_equal(got, ref)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 32))
def test_locality_and_mask_cardinality(seed, side):
    rng = np.random.default_rng(seed)
    img = rng.random((32, 48, 3)).astype(np.float32)
    patch = _patch(side, seed)
    pl = sample_placement(img.shape, patch.beta.shape, rng)
    out, mask = place_patch(img, patch, pl)
    assert mask.sum() == side * side
    assert np.array_equal(out[~mask], img[~mask])
    assert out.min() >= 0 and out.max() <= 1


def test_full_size_patch_has_one_placement():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pl = sample_placement((32, 32), (32, 32), rng)
        assert (pl.x, pl.y) == (0, 0)


def test_patch_larger_than_image():
    with pytest.raises(ShapeError):
        sample_placement((32, 32), (33, 33), np.random.default_rng(0))


def test_rotation_frequencies():
    rng = np.random.default_rng(0)
    ks = np.array([sample_placement((96, 128), (12, 12), rng).rotation_k for _ in range(10_000)])
    freq = np.bincount(ks, minlength=4) / len(ks)
    assert np.all(np.abs(freq - 0.25) <= 0.02)


def test_seeded_placements_reproducible():
    a = [sample_placement((96, 128), (12, 12), np.random.default_rng(3)) for _ in range(3)]
    r1, r2 = np.random.default_rng(8), np.random.default_rng(8)
    s1 = [sample_placement((96, 128), (12, 12), r1) for _ in range(50)]
    s2 = [sample_placement((96, 128), (12, 12), r2) for _ in range(50)]
    assert s1 == s2 and a[0] == a[1]


def test_scale_augmented_placement_in_bounds():
    rng = np.random.default_rng(2)
    img = np.zeros((32, 32, 3), np.float32)
    patch = _patch(10)
    sides = set()
    for _ in range(200):
        pl = sample_placement(img.shape, patch.beta.shape, rng, scale_aug=True)
        _, mask = place_patch(img, patch, pl)
        side = int(np.sqrt(mask.sum()))
        sides.add(side)
        assert 8 <= side <= 12
    assert len(sides) > 1


def test_patch_side_for_fraction():
    assert patch_side_for_fraction(0.01, (96, 128)) == 11
    assert patch_side_for_fraction(0.02, (96, 128)) == 16


def test_zero_step_patch_is_initialization(fresh_model, tiny_set):
    art, curve = train_patch(fresh_model, tiny_set, 8, AttackConfig(steps=0), seed=4)
    assert curve == []
    u = torch.rand(3, 8, 8, generator=torch.Generator().manual_seed(4), dtype=torch.float64)
    assert np.allclose(art.beta, u.numpy().transpose(1, 2, 0), atol=1e-6)
    assert art.size_fraction == pytest.approx(64 / (96 * 128))


def test_patch_training_runs_and_is_deterministic(fresh_model, tiny_set):
    cfg = AttackConfig(steps=3, batch_size=2, n_transforms=2, scale_aug=True)
    a, ca = train_patch(fresh_model, tiny_set, 8, cfg, seed=1)
    b, cb = train_patch(fresh_model, tiny_set, 8, cfg, seed=1)
    assert np.array_equal(a.beta, b.beta) and ca == cb
    assert a.beta.min() >= 0 and a.beta.max() <= 1


def test_batch_application_is_seeded(tiny_set):
    patch = _patch(12)
    a, ma, pa = apply_patch_batch(tiny_set.images, patch, seed=3)
    b, mb, pb = apply_patch_batch(tiny_set.images, patch, seed=3)
    assert np.array_equal(a, b) and pa == pb
    assert np.all(ma.sum(axis=(1, 2)) == 144)


def test_save_load_roundtrip(tmp_path):
    art = PatchArtifact(_patch(12).beta, 144 / 12288, {"victim": "v", "seed": 0, "steps": 1})
    save_patch(art, tmp_path / "x.dfap")
    back = load_patch(tmp_path / "x.dfap")
    assert back.beta.tobytes() == art.beta.tobytes()
    assert back.provenance == art.provenance
    assert (tmp_path / "x.dfap").read_bytes()[:8] == b"DFAPATCH"


def test_mid_gray_preview(tmp_path):
    save_patch(PatchArtifact(np.full((8, 8, 3), 0.5, np.float32)), tmp_path / "x.dfap")
    assert np.unique(np.asarray(Image.open(tmp_path / "x.png"))).tolist() == [128]


def test_perturbation_file_is_not_a_patch(tmp_path):
    pert = PerturbationArtifact(np.zeros((32, 32, 3), np.float32), 0.1)
    save_perturbation(pert, tmp_path / "p.dfap")
    with pytest.raises(ArtifactFormatError):
        load_patch(tmp_path / "p.dfap")


def test_patch_validation():
    with pytest.raises(ShapeError):
        PatchArtifact(np.zeros((4, 5, 3)))
    with pytest.raises(ValueError):
        PatchArtifact(np.full((4, 4, 3), 1.5))


def test_estimator_api(fresh_model, tiny_set):
    atk = AdversarialPatchAttack(victim=fresh_model, patch_side=8, steps=1, seed=0)
    out = atk.fit(tiny_set.images).transform(tiny_set.images[:2], placement_seed=1)
    changed = np.any(out != tiny_set.images[:2], axis=3)
    assert changed.sum(axis=(1, 2)).max() <= 64
