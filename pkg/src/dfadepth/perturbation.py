"""Generator-based additive perturbations and the one-shot FGSM baseline."""

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.base import BaseEstimator, TransformerMixin

from ._io import preview_path, read_array_file, save_png, write_array_file
from ._validation import check_image, check_images
from .dfa import dfa_objective
from .errors import NumericError, ShapeError
from .model import to_nchw, to_nhwc
from .types import TapSpec

logger = logging.getLogger(__name__)

PERTURBATION_MAGIC = b"DFAPERT1"
MODES = ("global", "image_specific")
MAX_ETA = 0.5


@dataclass
class AttackConfig:
    """Optimization settings shared by perturbation and patch training.

    ``learning_rate=None`` picks the attack's default (0.01 gradient descent
    for perturbations, 0.001 Adam for patches).
    """

    steps: int = 3000
    learning_rate: float = None
    batch_size: int = 1
    momentum: float = 0.0
    eta: float = 0.05
    patch_side: int = 12
    n_transforms: int = 1
    scale_aug: bool = False
    tap_weights: dict = None
    seed: int = 0
    probe_size: int = 8

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.n_transforms < 1:
            raise ValueError("batch_size and n_transforms must be >= 1")


def resolve_taps(victim, tap_weights):
    """Victim tap spec with optional per-layer weight overrides."""
    if not tap_weights:
        return victim.tap_spec
    unknown = set(tap_weights) - set(victim.tap_spec.layer_ids)
    if unknown:
        raise ValueError(f"tap override names untapped layers {sorted(unknown)}")
    base = victim.tap_spec.as_dict()
    base.update({k: float(v) for k, v in tap_weights.items()})
    return TapSpec(victim.tap_spec.layer_ids, tuple(base[k] for k in victim.tap_spec.layer_ids))


class PerturbationGenerator(nn.Module):
    """Small encoder-decoder whose tanh output is the perturbation direction.

    Instance norm after every hidden conv keeps the spatial structure of the
    input alive; without it a smooth noise map collapses to a near-constant
    color shift.
    """

    def __init__(self, in_channels=1, width=16):
        super().__init__()
        c = (width, 2 * width, 4 * width)
        self.down = nn.ModuleList([
            nn.Conv2d(in_channels, c[0], 3, stride=2, padding=1),
            nn.Conv2d(c[0], c[1], 3, stride=2, padding=1),
            nn.Conv2d(c[1], c[2], 3, stride=2, padding=1),
        ])
        self.up = nn.ModuleList([
            nn.Conv2d(c[2], c[1], 3, padding=1),
            nn.Conv2d(c[1], c[0], 3, padding=1),
            nn.Conv2d(c[0], c[0], 3, padding=1),
        ])
        self.down_norm = nn.ModuleList([nn.InstanceNorm2d(k, affine=True) for k in c])
        self.up_norm = nn.ModuleList([nn.InstanceNorm2d(k, affine=True) for k in (c[1], c[0], c[0])])
        self.head = nn.Conv2d(c[0], 3, 3, padding=1)

    def forward(self, x):
        for conv, norm in zip(self.down, self.down_norm):
            x = F.relu(norm(conv(x)))
        for conv, norm in zip(self.up, self.up_norm):
            x = F.relu(norm(conv(F.interpolate(x, scale_factor=2, mode="nearest"))))
        return torch.tanh(self.head(x))


@dataclass
class PerturbationArtifact:
    alpha: np.ndarray
    eta: float
    provenance: dict = field(default_factory=dict)
    generator: PerturbationGenerator = None  # image-specific mode only; not serialized

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float32)
        if self.alpha.ndim != 3 or self.alpha.shape[2] != 3:
            raise ShapeError(f"alpha must be H x W x 3, got {self.alpha.shape}")
        if not np.all(np.isfinite(self.alpha)) or np.abs(self.alpha).max() > 1.0:
            raise ValueError("alpha entries must be finite and within [-1, 1]")
        if not 0.0 <= self.eta <= MAX_ETA:
            raise ValueError(f"eta must be in [0, {MAX_ETA}], got {self.eta}")

    @property
    def mode(self):
        return self.provenance.get("mode", "global")

    @classmethod
    def zeros(cls, shape, eta=0.05):
        return cls(np.zeros((*shape, 3), np.float32), eta, {"mode": "global", "victim": None})


def _apply(x, alpha, eta):
    return torch.clamp(x + eta * alpha, 0.0, 1.0)


def apply_perturbation(image, artifact):
    """``clip(image + eta * alpha, 0, 1)`` for one H x W x 3 image."""
    image = check_image(image)
    if image.shape != artifact.alpha.shape:
        raise ShapeError(f"alpha {artifact.alpha.shape} does not match image {image.shape}")
    out = np.clip(image + np.float32(artifact.eta) * artifact.alpha, 0.0, 1.0)
    return out.astype(np.float32)


def perturb_images(images, artifact, batch_size=16):
    """Attack a batch; image-specific artifacts regenerate alpha per image."""
    images = check_images(images)
    if artifact.mode != "image_specific" or artifact.generator is None:
        if images.shape[1:] != artifact.alpha.shape:
            raise ShapeError(f"alpha {artifact.alpha.shape} does not match images {images.shape[1:]}")
        return np.clip(images + np.float32(artifact.eta) * artifact.alpha, 0.0, 1.0).astype(np.float32)
    out = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            x = to_nchw(images[start:start + batch_size])
            out.append(to_nhwc(_apply(x, artifact.generator(x), artifact.eta)))
    return np.concatenate(out).astype(np.float32)


def train_perturbation(victim, dataset, mode="global", eta=None, config=None, seed=None):
    """Optimize a perturbation generator by descending the feature loss.

    Clean-image features come from the frozen victim and are treated as
    constants. Returns ``(artifact, generator, loss_curve)``; the curve holds
    the minibatch loss before each update plus the loss after the last one.
    Minibatches differ from step to step, so the provenance also records the
    loss on one fixed probe batch before and after training.
    """
    config = config or AttackConfig()
    eta = config.eta if eta is None else eta
    seed = config.seed if seed is None else seed
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not 0.0 <= eta <= MAX_ETA:
        raise ValueError(f"eta must be in [0, {MAX_ETA}], got {eta}")
    victim.freeze()
    images = victim.check_input(dataset.images)
    taps = resolve_taps(victim, config.tap_weights)
    lr = 0.01 if config.learning_rate is None else config.learning_rate

    gen = torch.Generator().manual_seed(seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        generator = PerturbationGenerator(1 if mode == "global" else 3)
    h, w = victim.input_shape
    noise = torch.rand(1, 1, h, w, generator=gen) if mode == "global" else None
    opt = torch.optim.SGD(generator.parameters(), lr=lr, momentum=config.momentum)
    rng = np.random.default_rng(seed)

    def step_loss(x):
        with torch.no_grad():
            _, clean = victim.features_torch(x)
        alpha = generator(noise if mode == "global" else x)
        _, feats = victim.features_torch(_apply(x, alpha, eta))
        return dfa_objective(clean, feats, taps)

    probe_idx = np.sort(rng.choice(len(images), min(config.probe_size, len(images)), replace=False))
    probe = to_nchw(images[probe_idx])

    def probe_loss():
        with torch.no_grad():
            return step_loss(probe).item()

    probe_start = probe_loss()
    curve = []
    for step in range(config.steps + 1):
        idx = rng.integers(0, len(images), size=config.batch_size)
        loss = step_loss(to_nchw(images[idx]))
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite feature loss {value} at step {step} (eta={eta}, mode={mode})")
        curve.append(value)
        if step == config.steps:
            break
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 500 == 0:
            logger.info("perturbation step %d loss %.5f", step, value)

    probe_end = probe_loss()
    generator.eval()
    for p in generator.parameters():
        p.requires_grad_(False)
    with torch.no_grad():
        first = noise if mode == "global" else to_nchw(images[:1])
        alpha = to_nhwc(generator(first))[0]
    provenance = {"victim": victim.model_id, "mode": mode, "seed": int(seed),
                  "steps": int(config.steps), "learning_rate": lr, "momentum": config.momentum,
                  "attack": "dfa-perturbation", "probe_loss_start": probe_start,
                  "probe_loss_end": probe_end}
    artifact = PerturbationArtifact(alpha, float(eta), provenance,
                                    generator if mode == "image_specific" else None)
    return artifact, generator, curve


def fgsm_images(victim, images, eta, seed=0, batch_size=16):
    """One-shot sign-gradient attack on the depth output.

    The loss is the mean squared error between the depth predicted for the
    attacked input and the victim's own clean prediction. That loss and its
    gradient vanish exactly at the clean image, so the gradient is taken at
    a seeded random-sign start ``clip(I + eta/2 * r, 0, 1)``; the step itself
    is applied to the clean image.
    """
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    images = victim.check_input(images)
    victim.freeze()
    gen = torch.Generator().manual_seed(seed)
    out = []
    for start in range(0, len(images), batch_size):
        x = to_nchw(images[start:start + batch_size])
        with torch.no_grad():
            target = victim.depth_torch(x)
        r = torch.randint(0, 2, x.shape, generator=gen, dtype=torch.float32) * 2 - 1
        x0 = torch.clamp(x + 0.5 * eta * r, 0.0, 1.0).requires_grad_(True)
        loss = F.mse_loss(victim.depth_torch(x0), target)
        (grad,) = torch.autograd.grad(loss, x0)
        if not torch.all(torch.isfinite(grad)):
            raise NumericError("non-finite FGSM gradient")
        out.append(to_nhwc(torch.clamp(x + eta * grad.sign(), 0.0, 1.0)))
    return np.concatenate(out).astype(np.float32)


def fgsm_attack(victim, image, eta, seed=0):
    """FGSM on a single H x W x 3 image."""
    image = check_image(image, expected_shape=victim.input_shape)
    return fgsm_images(victim, image[None], eta, seed)[0]


def save_perturbation(artifact, path):
    """Write the artifact and a preview PNG with alpha mapped by ``(alpha + 1) / 2``."""
    meta = {"eta": artifact.eta, "provenance": artifact.provenance}
    write_array_file(path, PERTURBATION_MAGIC, artifact.alpha, meta)
    save_png(preview_path(path), (artifact.alpha + 1.0) / 2.0)
    return path


def load_perturbation(path):
    alpha, meta = read_array_file(path, PERTURBATION_MAGIC)
    return PerturbationArtifact(alpha, float(meta["eta"]), meta.get("provenance", {}))


class GlobalPerturbationAttack(BaseEstimator, TransformerMixin):
    """Estimator wrapper: ``fit`` learns the perturbation, ``transform`` applies it."""

    def __init__(self, victim=None, eta=0.05, mode="global", steps=3000, learning_rate=0.01,
                 batch_size=1, momentum=0.0, tap_weights=None, seed=0):
        self.victim = victim
        self.eta = eta
        self.mode = mode
        self.steps = steps
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.momentum = momentum
        self.tap_weights = tap_weights
        self.seed = seed

    def fit(self, X, y=None):
        from .data import SceneDataset

        X = check_images(X)
        dummy = np.ones(X.shape[:3], np.float32)
        config = AttackConfig(steps=self.steps, learning_rate=self.learning_rate,
                              batch_size=self.batch_size, momentum=self.momentum,
                              tap_weights=self.tap_weights)
        self.artifact_, self.generator_, self.loss_curve_ = train_perturbation(
            self.victim, SceneDataset(X, dummy), self.mode, self.eta, config, self.seed)
        return self

    def transform(self, X):
        if not hasattr(self, "artifact_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("GlobalPerturbationAttack is not fitted yet")
        return perturb_images(X, self.artifact_)


class FGSMAttack(BaseEstimator, TransformerMixin):
    """Stateless baseline; ``fit`` is a no-op kept for pipeline compatibility."""

    def __init__(self, victim=None, eta=0.05, seed=0):
        self.victim = victim
        self.eta = eta
        self.seed = seed

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return fgsm_images(self.victim, X, self.eta, self.seed)
