"""Square adversarial patches trained under random rotation and placement."""

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator, TransformerMixin

from ._io import preview_path, read_array_file, save_png, write_array_file
from ._validation import check_image, check_images
from .dfa import dfa_objective
from .errors import NumericError, ShapeError
from .model import to_nchw
from .perturbation import AttackConfig, resolve_taps

logger = logging.getLogger(__name__)

PATCH_MAGIC = b"DFAPATCH"
SCALE_RANGE = (0.8, 1.2)
_LOGIT_CLIP = 1e-6


@dataclass
class PatchArtifact:
    beta: np.ndarray
    size_fraction: float = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float32)
        if self.beta.ndim != 3 or self.beta.shape[2] != 3:
            raise ShapeError(f"beta must be S x S x 3, got {self.beta.shape}")
        if self.beta.shape[0] != self.beta.shape[1]:
            raise ShapeError(f"patch must be square, got {self.beta.shape[:2]}")
        # a 0 x 0 patch is allowed as the zero-area control
        if self.beta.size and (not np.all(np.isfinite(self.beta))
                               or self.beta.min() < 0 or self.beta.max() > 1):
            raise ValueError("beta entries must lie in [0, 1]")

    @property
    def side(self):
        return self.beta.shape[0]


@dataclass(frozen=True)
class Placement:
    x: int
    y: int
    rotation_k: int = 0
    scale: float = 1.0


def patch_side_for_fraction(fraction, image_shape):
    """Side of the square patch covering roughly ``fraction`` of the image area."""
    h, w = image_shape
    return max(1, int(round(np.sqrt(fraction * h * w))))


def _scaled_side(side, scale):
    return max(1, int(round(side * scale)))


def sample_placement(image_shape, patch_shape, rng, scale_aug=False):
    """Uniform top-left corner keeping the patch inside the image, uniform 90-degree rotation."""
    h, w = image_shape[:2]
    ph, pw = patch_shape[:2]
    scale = 1.0
    if scale_aug:
        scale = float(rng.uniform(*SCALE_RANGE))
        ph = pw = min(_scaled_side(ph, scale), h, w)
        scale = ph / patch_shape[0]
    if ph > h or pw > w:
        raise ShapeError(f"patch {patch_shape[:2]} does not fit in image {image_shape[:2]}")
    x = int(rng.integers(0, w - pw + 1))
    y = int(rng.integers(0, h - ph + 1))
    k = int(rng.integers(0, 4))
    return Placement(x, y, k, scale)


def _resize_nearest(beta, side):
    if side == beta.shape[0]:
        return beta
    idx = (np.arange(side) * beta.shape[0] // side)
    return beta[idx][:, idx]


def place_patch(image, patch, placement):
    """Overwrite the placement rectangle with the rotated patch.

    Returns ``(patched_image, mask)``; pixels outside ``mask`` are untouched.
    """
    image = check_image(image)
    beta = patch.beta if isinstance(patch, PatchArtifact) else np.asarray(patch, np.float32)
    if placement.scale != 1.0:
        beta = _resize_nearest(beta, _scaled_side(beta.shape[0], placement.scale))
    block = np.rot90(beta, placement.rotation_k % 4, axes=(0, 1))
    h, w = image.shape[:2]
    ph, pw = block.shape[:2]
    if not (0 <= placement.x <= w - pw and 0 <= placement.y <= h - ph):
        raise ShapeError(f"placement {placement} puts a {ph}x{pw} patch outside a {h}x{w} image")
    out = image.copy()
    out[placement.y:placement.y + ph, placement.x:placement.x + pw] = block
    mask = np.zeros((h, w), dtype=bool)
    mask[placement.y:placement.y + ph, placement.x:placement.x + pw] = True
    return out, mask


def _place_torch(x, beta, placement):
    """Differentiable compositing of a CHW patch onto a 1 x 3 x H x W image."""
    if placement.scale != 1.0:
        side = _scaled_side(beta.shape[-1], placement.scale)
        beta = F.interpolate(beta[None], size=(side, side), mode="nearest")[0]
    block = torch.rot90(beta, placement.rotation_k % 4, dims=(1, 2))
    _, _, h, w = x.shape
    ph, pw = block.shape[1:]
    pad = (placement.x, w - pw - placement.x, placement.y, h - ph - placement.y)
    canvas = F.pad(block, pad)[None]
    mask = F.pad(torch.ones(1, ph, pw), pad)[None]
    return x * (1 - mask) + canvas * mask


def apply_patch_batch(images, patch, seed=0, scale_aug=False):
    """Paste ``patch`` at one seeded random placement per image.

    Returns ``(patched, masks, placements)``.
    """
    images = check_images(images)
    rng = np.random.default_rng(seed)
    out = np.empty_like(images)
    masks = np.zeros(images.shape[:3], dtype=bool)
    placements = []
    for i, img in enumerate(images):
        pl = sample_placement(img.shape, patch.beta.shape, rng, scale_aug)
        out[i], masks[i] = place_patch(img, patch, pl)
        placements.append(pl)
    return out, masks, placements


def train_patch(victim, dataset, patch_side=None, config=None, seed=None):
    """Optimize a patch by minimizing the feature loss under random transforms.

    The patch is ``sigmoid(theta)`` with ``theta`` initialized at the logit of
    U(0, 1) samples. Every step draws fresh images and placements and takes
    one Adam step (betas 0.9 / 0.999). Returns ``(artifact, loss_curve)``.
    """
    config = config or AttackConfig()
    side = config.patch_side if patch_side is None else int(patch_side)
    seed = config.seed if seed is None else seed
    victim.freeze()
    images = victim.check_input(dataset.images)
    h, w = victim.input_shape
    if side < 1 or side > min(h, w):
        raise ShapeError(f"patch side {side} does not fit a {h}x{w} image")
    taps = resolve_taps(victim, config.tap_weights)
    lr = 0.001 if config.learning_rate is None else config.learning_rate

    gen = torch.Generator().manual_seed(seed)
    u = torch.rand(3, side, side, generator=gen, dtype=torch.float64)
    u = u.clamp(_LOGIT_CLIP, 1 - _LOGIT_CLIP)
    theta = torch.log(u / (1 - u)).float().requires_grad_(True)
    opt = torch.optim.Adam([theta], lr=lr, betas=(0.9, 0.999))
    rng = np.random.default_rng(seed)

    def step_loss():
        beta = torch.sigmoid(theta)
        idx = rng.integers(0, len(images), size=config.batch_size)
        losses = []
        for i in idx:
            x = to_nchw(images[i])
            with torch.no_grad():
                _, clean = victim.features_torch(x)
            for _ in range(config.n_transforms):
                pl = sample_placement((h, w), (side, side), rng, config.scale_aug)
                _, feats = victim.features_torch(_place_torch(x, beta, pl))
                losses.append(dfa_objective(clean, feats, taps))
        return torch.stack(losses).mean()

    curve = []
    for step in range(config.steps):
        loss = step_loss()
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite feature loss {value} at step {step} (patch side {side})")
        curve.append(value)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 500 == 0:
            logger.info("patch step %d loss %.5f", step, value)

    with torch.no_grad():
        beta = torch.sigmoid(theta).numpy().transpose(1, 2, 0)
    provenance = {"victim": victim.model_id, "seed": int(seed), "steps": int(config.steps),
                  "learning_rate": lr, "scale_aug": bool(config.scale_aug),
                  "attack": "dfa-patch"}
    artifact = PatchArtifact(np.clip(beta, 0.0, 1.0), side * side / (h * w), provenance)
    return artifact, curve


def save_patch(artifact, path):
    meta = {"size_fraction": artifact.size_fraction, "provenance": artifact.provenance}
    write_array_file(path, PATCH_MAGIC, artifact.beta, meta)
    save_png(preview_path(path), artifact.beta)
    return path


def load_patch(path):
    beta, meta = read_array_file(path, PATCH_MAGIC)
    return PatchArtifact(beta, meta.get("size_fraction"), meta.get("provenance", {}))


class AdversarialPatchAttack(BaseEstimator, TransformerMixin):
    """Estimator wrapper: ``fit`` trains the patch, ``transform`` pastes it at seeded placements."""

    def __init__(self, victim=None, patch_side=12, steps=3000, learning_rate=0.001,
                 batch_size=1, n_transforms=1, scale_aug=False, tap_weights=None, seed=0):
        self.victim = victim
        self.patch_side = patch_side
        self.steps = steps
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.n_transforms = n_transforms
        self.scale_aug = scale_aug
        self.tap_weights = tap_weights
        self.seed = seed

    def fit(self, X, y=None):
        from .data import SceneDataset

        X = check_images(X)
        config = AttackConfig(steps=self.steps, learning_rate=self.learning_rate,
                              batch_size=self.batch_size, n_transforms=self.n_transforms,
                              scale_aug=self.scale_aug, tap_weights=self.tap_weights)
        dummy = np.ones(X.shape[:3], np.float32)
        self.artifact_, self.loss_curve_ = train_patch(
            self.victim, SceneDataset(X, dummy), self.patch_side, config, self.seed)
        return self

    def transform(self, X, placement_seed=0):
        if not hasattr(self, "artifact_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("AdversarialPatchAttack is not fitted yet")
        return apply_patch_batch(X, self.artifact_, placement_seed)[0]
