"""Synthetic street-like scenes with dense ground-truth depth.

Two distributions are provided. ``"A"`` renders flat-colored billboards over a
gray background, ``"B"`` renders striped billboards over a gradient sky. Both
share the same geometry model so a victim trained on one can be evaluated on
the other for cross-data experiments.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_images
from .errors import ArtifactFormatError, ShapeError
from .types import DepthMap

DISTRIBUTIONS = ("A", "B")
DEFAULT_IMAGE_SHAPE = (96, 128)

# scene geometry, meters
NEAR_DEPTH = 2.0
FAR_DEPTH = 60.0
BILLBOARD_DEPTH = (2.0, 50.0)


@dataclass
class Billboard:
    top: int
    bottom: int
    left: int
    right: int
    depth: float


@dataclass
class SceneDataset:
    """Images (N, H, W, 3) in [0, 1] and dense depths (N, H, W) in meters."""

    images: np.ndarray
    depths: np.ndarray
    distribution_id: str = "A"
    seed: int = 0
    valid_masks: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.depths = np.asarray(self.depths, dtype=np.float32)
        if len(self.images) == 0:
            raise ValueError("dataset is empty")
        if self.images.ndim != 4 or self.depths.ndim != 3:
            raise ShapeError("images must be (N,H,W,3) and depths (N,H,W)")
        if self.images.shape[:3] != self.depths.shape:
            raise ShapeError(
                f"images {self.images.shape} and depths {self.depths.shape} disagree"
            )
        if self.valid_masks is None:
            self.valid_masks = np.ones(self.depths.shape, dtype=bool)

    def __len__(self):
        return len(self.images)

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:3])

    def depth_map(self, i, d_min=1.0, d_max=80.0):
        return DepthMap(self.depths[i], self.valid_masks[i], d_min, d_max)

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return SceneDataset(
            self.images[idx], self.depths[idx], self.distribution_id, self.seed,
            self.valid_masks[idx], dict(self.meta),
        )

    def manifest(self):
        return {
            "distribution_id": self.distribution_id,
            "seed": int(self.seed),
            "count": len(self),
            "image_shape": list(self.image_shape),
            **self.meta,
        }


def _ground_depth_rows(horizon, height):
    rows = np.arange(height, dtype=np.float64)
    t = (rows - horizon) / max(height - 1 - horizon, 1)
    return FAR_DEPTH + (NEAR_DEPTH - FAR_DEPTH) * t


def render_scene(rng, image_shape=DEFAULT_IMAGE_SHAPE, distribution_id="A"):
    """Render one scene. Returns ``(image, depth, billboards)``.

    Billboards are painted far-to-near so nearer ones occlude farther ones.
    """
    if distribution_id not in DISTRIBUTIONS:
        raise ValueError(f"unknown distribution {distribution_id!r}, expected one of {DISTRIBUTIONS}")
    h, w = image_shape
    focal = float(w)
    horizon = int(rng.integers(int(0.3 * h), int(0.45 * h) + 1))

    depth = np.full((h, w), FAR_DEPTH, dtype=np.float64)
    image = np.empty((h, w, 3), dtype=np.float64)

    rows = np.arange(h)[:, None]
    if distribution_id == "A":
        image[:] = 0.5
    else:
        top = rng.uniform(0.15, 0.45, size=3)
        bottom = rng.uniform(0.6, 0.95, size=3)
        t = (rows / max(horizon, 1)).clip(0, 1)[..., None]
        image[:] = top * (1 - t) + bottom * t

    # ground plane below the horizon; stripes are fixed in world space so
    # their image spacing shrinks toward the horizon
    ground_depth = _ground_depth_rows(horizon, h)
    ground = np.arange(h) >= horizon
    depth[ground] = ground_depth[ground][:, None]
    stripe = (np.floor(ground_depth / 2.5).astype(int) % 2)[:, None]
    if distribution_id == "A":
        base = np.array([0.42, 0.38, 0.33])
        shade = np.where(stripe, 0.85, 1.0)[..., None] * base
    else:
        cols = np.arange(w)[None, :]
        lateral = (np.floor((cols - w / 2) * ground_depth[:, None] / focal / 1.5).astype(int) % 2)
        checker = (stripe + lateral) % 2
        base = rng.uniform(0.3, 0.6, size=3)
        shade = np.where(checker, 0.7, 1.0)[..., None] * base
    image[ground] = np.broadcast_to(shade, (h, w, 3))[ground]

    n_boards = int(rng.integers(3, 9))
    boards = []
    for _ in range(n_boards):
        z = float(rng.uniform(*BILLBOARD_DEPTH))
        height_m = rng.uniform(1.5, 4.0)
        width_m = rng.uniform(1.0, 4.0)
        cx = rng.uniform(0, w)
        bottom = horizon + (FAR_DEPTH - z) / (FAR_DEPTH - NEAR_DEPTH) * (h - 1 - horizon)
        # capped so that a board never fills the frame and its ground contact stays visible
        ph = min(max(focal * height_m / z, 2.0), 0.5 * h)
        pw = min(max(focal * width_m / z, 2.0), 0.4 * w)
        color = rng.uniform(0.05, 0.95, size=3)
        alt = rng.uniform(0.05, 0.95, size=3)
        period = int(rng.integers(3, 9))
        board = Billboard(
            top=int(np.clip(np.floor(bottom - ph), 0, h - 1)),
            bottom=int(np.clip(np.round(bottom), 0, h - 1)),
            left=int(np.clip(np.floor(cx - pw / 2), 0, w - 1)),
            right=int(np.clip(np.ceil(cx + pw / 2), 0, w - 1)),
            depth=z,
        )
        boards.append((board, color, alt, period))

    boards.sort(key=lambda b: -b[0].depth)
    for board, color, alt, period in boards:
        rs = slice(board.top, board.bottom + 1)
        cs = slice(board.left, board.right + 1)
        depth[rs, cs] = board.depth
        if distribution_id == "A":
            image[rs, cs] = color
        else:
            cols = np.arange(board.left, board.right + 1)
            on = ((cols - board.left) // period) % 2 == 0
            image[rs, cs] = np.where(on[None, :, None], color, alt)

    image += rng.normal(0.0, 0.01, size=image.shape)
    image = np.clip(image, 0.0, 1.0)
    return image.astype(np.float32), depth.astype(np.float32), [b[0] for b in boards]


def generate_scenes(distribution_id="A", count=100, image_shape=DEFAULT_IMAGE_SHAPE, seed=0):
    """Generate ``count`` scenes deterministically from ``(distribution_id, seed)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    image_shape = tuple(int(s) for s in image_shape)
    if len(image_shape) != 2 or min(image_shape) < 32 or image_shape[0] % 16 or image_shape[1] % 16:
        raise ShapeError(f"image_shape must be (H, W) >= 32 and divisible by 16, got {image_shape}")
    if distribution_id not in DISTRIBUTIONS:
        raise ValueError(f"unknown distribution {distribution_id!r}, expected one of {DISTRIBUTIONS}")
    rng = np.random.default_rng([int(seed), DISTRIBUTIONS.index(distribution_id)])
    images = np.empty((count, *image_shape, 3), dtype=np.float32)
    depths = np.empty((count, *image_shape), dtype=np.float32)
    for i in range(count):
        images[i], depths[i], _ = render_scene(rng, image_shape, distribution_id)
    return SceneDataset(images, depths, distribution_id, seed)


def save_dataset(dataset, directory):
    """Write ``images.npy``, ``depths.npy`` and ``manifest.json`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    np.save(os.path.join(directory, "images.npy"), dataset.images)
    np.save(os.path.join(directory, "depths.npy"), dataset.depths)
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(dataset.manifest(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_dataset(directory):
    path = os.path.join(directory, "manifest.json")
    try:
        with open(path) as f:
            manifest = json.load(f)
        images = np.load(os.path.join(directory, "images.npy"))
        depths = np.load(os.path.join(directory, "depths.npy"))
    except FileNotFoundError:
        raise
    except (ValueError, OSError) as exc:
        raise ArtifactFormatError(f"cannot read dataset in {directory}: {exc}") from exc
    if len(images) != manifest.get("count"):
        raise ArtifactFormatError(f"dataset in {directory} does not match its manifest")
    check_images(images[:1])
    extra = {k: v for k, v in manifest.items()
             if k not in ("distribution_id", "seed", "count", "image_shape")}
    return SceneDataset(images, depths, manifest["distribution_id"], manifest["seed"], meta=extra)
