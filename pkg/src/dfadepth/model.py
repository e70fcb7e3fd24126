"""Toy encoder-decoder depth network used as the attack victim.

The network maps an RGB image to a sigmoid disparity ``s`` which is turned into
metric depth ``d_min * d_max / (d_min + s * (d_max - d_min))``, so every
prediction lies in ``[d_min, d_max]`` and ``s -> 1`` means near.
"""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.base import BaseEstimator

from ._validation import check_image, check_images
from .errors import (ArtifactFormatError, NumericError, ShapeError,
                     TrainingFailure, UnsupportedArchitectureError)
from .types import DepthMap, TapSpec

logger = logging.getLogger(__name__)

ARCHITECTURE_ID = "toy-unet-v1"
SCHEMA_VERSION = 1
ENCODER_CHANNELS = (32, 64, 128, 256)
DEFAULT_DECODER_CHANNELS = (64, 32, 16, 8)
INIT_DEPTH = 10.0  # meters; head bias starts the net near a typical scene depth
LAYER_ORDER = ("enc1", "enc2", "enc3", "enc4", "dec1", "dec2", "dec3", "dec4", "disp")


def default_tap_spec(k_skip=2, weights=None):
    """Tap every convolution except the first ``k_skip`` encoder convolutions."""
    if not 0 <= k_skip < len(ENCODER_CHANNELS):
        raise ValueError(f"k_skip must be in [0, {len(ENCODER_CHANNELS) - 1}]")
    return TapSpec(LAYER_ORDER[k_skip:], weights)


class DepthNet(nn.Module):
    """Four stride-2 encoder blocks (conv, batch norm, ELU), four nearest-upsample decoder blocks."""

    def __init__(self, decoder_channels=DEFAULT_DECODER_CHANNELS):
        super().__init__()
        enc, norms = [], []
        cin = 3
        for cout in ENCODER_CHANNELS:
            enc.append(nn.Conv2d(cin, cout, 3, stride=2, padding=1))
            norms.append(nn.BatchNorm2d(cout))
            cin = cout
        self.encoder = nn.ModuleList(enc)
        self.encoder_norm = nn.ModuleList(norms)

        # skips: enc3, enc2, enc1, then the input image at full resolution
        skips = (ENCODER_CHANNELS[2], ENCODER_CHANNELS[1], ENCODER_CHANNELS[0], 3)
        dec = []
        for cout, skip in zip(decoder_channels, skips):
            dec.append(nn.Conv2d(cin + skip, cout, 3, padding=1))
            cin = cout
        self.decoder = nn.ModuleList(dec)
        self.head = nn.Conv2d(cin, 1, 3, padding=1)

    def forward(self, x):
        """Return ``(disparity, activations)`` where activations follow ``LAYER_ORDER``."""
        acts = {}
        h = x
        enc_out = []
        for i, (conv, norm) in enumerate(zip(self.encoder, self.encoder_norm)):
            h = F.elu(norm(conv(h)))
            acts[f"enc{i + 1}"] = h
            enc_out.append(h)
        skips = [enc_out[2], enc_out[1], enc_out[0], x]
        for i, (conv, skip) in enumerate(zip(self.decoder, skips)):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = F.elu(conv(torch.cat([h, skip], dim=1)))
            acts[f"dec{i + 1}"] = h
        logits = self.head(h)
        acts["disp"] = logits
        return torch.sigmoid(logits)[:, 0], acts


@dataclass
class TrainConfig:
    max_epochs: int = 40
    learning_rate: float = 1e-3
    batch_size: int = 8
    target_l1: float = 3.0
    holdout_fraction: float = 0.1
    early_stop: bool = False
    d_min: float = 1.0
    d_max: float = 80.0
    decoder_channels: tuple = DEFAULT_DECODER_CHANNELS
    k_skip: int = 2
    tap_weights: tuple = None
    loss_space: str = "log"
    augment: bool = False


@dataclass
class DepthModel:
    """A depth network plus everything needed to attack and persist it."""

    net: DepthNet
    input_shape: tuple = (96, 128)
    tap_spec: TapSpec = field(default_factory=default_tap_spec)
    d_min: float = 1.0
    d_max: float = 80.0
    seed: int = 0
    decoder_channels: tuple = DEFAULT_DECODER_CHANNELS
    architecture_id: str = ARCHITECTURE_ID
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.decoder_channels = tuple(int(c) for c in self.decoder_channels)
        unknown = set(self.tap_spec.layer_ids) - set(LAYER_ORDER)
        if unknown:
            raise ValueError(f"tap spec names unknown layers {sorted(unknown)}")
        order = [LAYER_ORDER.index(l) for l in self.tap_spec.layer_ids]
        if order != sorted(order):
            raise ValueError("tap layer ids must follow network evaluation order")
        self.net.eval()

    @property
    def model_id(self):
        return f"{self.architecture_id}@seed{self.seed}"

    def disparity_to_depth(self, s):
        return self.d_min * self.d_max / (self.d_min + s * (self.d_max - self.d_min))

    def depth_torch(self, x):
        """Depth (N, H, W) for an NCHW batch; differentiable."""
        s, _ = self.net(x)
        return self.disparity_to_depth(s).clamp(self.d_min, self.d_max)

    def features_torch(self, x):
        """``(depth, {layer_id: activation})`` restricted to the tapped layers."""
        s, acts = self.net(x)
        depth = self.disparity_to_depth(s).clamp(self.d_min, self.d_max)
        return depth, {k: acts[k] for k in self.tap_spec.layer_ids}

    def freeze(self):
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.net.eval()
        return self

    def check_input(self, images):
        return check_images(images, expected_shape=self.input_shape)


def to_nchw(images):
    """(N, H, W, 3) numpy -> float32 NCHW tensor."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def to_nhwc(tensor):
    return tensor.detach().cpu().numpy().transpose(0, 2, 3, 1)


def build_model(seed=0, input_shape=(96, 128), decoder_channels=DEFAULT_DECODER_CHANNELS,
                tap_spec=None, d_min=1.0, d_max=80.0):
    """Freshly initialized model; initialization depends only on ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = DepthNet(decoder_channels)
    # a zero bias means ~2 m everywhere, and the first updates then drive the
    # sigmoid into saturation on far scenes
    s0 = (d_min * d_max / INIT_DEPTH - d_min) / (d_max - d_min)
    with torch.no_grad():
        net.head.bias.fill_(float(np.log(s0 / (1 - s0))))
    return DepthModel(net, input_shape, tap_spec or default_tap_spec(), d_min, d_max,
                      seed, decoder_channels)


def forward(model, image, capture_features=False):
    """Run one image through ``model``.

    Returns ``(DepthMap, features)`` where ``features`` maps each tapped layer
    id to a C x H_l x W_l array, or is None unless ``capture_features``.
    """
    image = check_image(image, expected_shape=model.input_shape)
    with torch.no_grad():
        depth, feats = model.features_torch(to_nchw(image))
    depth = depth[0].numpy()
    if not np.all(np.isfinite(depth)):
        raise NumericError("non-finite depth output")
    bundle = None
    if capture_features:
        bundle = {}
        for k, v in feats.items():
            arr = v[0].numpy()
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite activation in layer {k}")
            bundle[k] = arr
    return DepthMap(depth, None, model.d_min, model.d_max), bundle


def predict_depth(model, images, batch_size=16):
    """Depth for a batch of images, (N, H, W) float32."""
    images = model.check_input(images)
    out = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            out.append(model.depth_torch(to_nchw(images[start:start + batch_size])).numpy())
    depth = np.concatenate(out)
    if not np.all(np.isfinite(depth)):
        raise NumericError("non-finite depth output")
    return depth


def photometric_jitter(x, gen):
    """Per-image channel offsets, contrast scaling and pixel noise, clipped to [0, 1]."""
    n = x.shape[0]
    offset = (torch.rand(n, 3, 1, 1, generator=gen) - 0.5) * 0.2
    contrast = 0.85 + 0.3 * torch.rand(n, 1, 1, 1, generator=gen)
    sigma = 0.03 * torch.rand(n, 1, 1, 1, generator=gen)
    noise = torch.randn(x.shape, generator=gen) * sigma
    mean = x.mean(dim=(1, 2, 3), keepdim=True)
    return ((x - mean) * contrast + mean + offset + noise).clamp(0.0, 1.0)


def train_toy_model(dataset, config=None, seed=0):
    """Supervised L1 training of a fresh victim on ``dataset``.

    A ``holdout_fraction`` slice of the dataset is kept out of training and
    the mean absolute depth error on it must end below ``config.target_l1``,
    otherwise :class:`TrainingFailure` is raised.
    """
    config = config or TrainConfig()
    if dataset is None or len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if config.learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    if config.max_epochs < 1:
        raise ValueError("max_epochs must be >= 1")
    check_images(dataset.images[:1])

    n = len(dataset)
    n_hold = int(round(n * config.holdout_fraction))
    if n_hold < 1 or n_hold >= n:
        raise ValueError(f"holdout_fraction leaves {n - n_hold} training / {n_hold} held-out scenes")
    gen = torch.Generator().manual_seed(seed)
    perm = torch.randperm(n, generator=gen).numpy()
    hold_idx, train_idx = np.sort(perm[:n_hold]), perm[n_hold:]

    tap = default_tap_spec(config.k_skip, config.tap_weights)
    model = build_model(seed, dataset.image_shape, config.decoder_channels, tap,
                        config.d_min, config.d_max)
    net = model.net
    x_all = to_nchw(dataset.images)
    y_all = torch.from_numpy(dataset.depths)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)

    hold_l1 = float("inf")
    for epoch in range(config.max_epochs):
        net.train()
        order = torch.from_numpy(train_idx)[torch.randperm(len(train_idx), generator=gen)]
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            x = x_all[idx]
            if config.augment:
                x = photometric_jitter(x, gen)
            pred = model.depth_torch(x)
            target = y_all[idx]
            if config.loss_space == "log":
                loss = (pred.log() - target.log()).abs().mean()
            else:
                loss = (pred - target).abs().mean()
            if not torch.isfinite(loss):
                raise TrainingFailure(f"non-finite training loss at epoch {epoch}", hold_l1)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        net.eval()
        pred = predict_depth(model, dataset.images[hold_idx])
        hold_l1 = float(np.abs(pred - dataset.depths[hold_idx]).mean())
        model.history.append({"epoch": epoch + 1, "train_l1": total / len(order),
                              "holdout_l1": hold_l1})
        logger.info("epoch %d train_l1 %.4f holdout_l1 %.4f", epoch + 1,
                    total / len(order), hold_l1)
        if config.early_stop and hold_l1 < config.target_l1:
            break
    if not hold_l1 < config.target_l1:
        raise TrainingFailure(
            f"held-out L1 {hold_l1:.4f} m did not reach target {config.target_l1} m "
            f"within {config.max_epochs} epochs", hold_l1)
    model.net.eval()
    return model


def _param_layout(net):
    return [[name, list(t.shape)] for name, t in net.state_dict().items()]


def save_model(model, directory):
    """Write ``weights.bin`` (raw little-endian float32) and ``manifest.json``."""
    os.makedirs(directory, exist_ok=True)
    blob = b"".join(t.detach().cpu().numpy().astype("<f4").tobytes()
                    for t in model.net.state_dict().values())
    with open(os.path.join(directory, "weights.bin"), "wb") as f:
        f.write(blob)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "architecture_id": model.architecture_id,
        "model_id": model.model_id,
        "tap_layer_ids": list(model.tap_spec.layer_ids),
        "tap_weights": list(model.tap_spec.weights),
        "d_min": model.d_min,
        "d_max": model.d_max,
        "seed": int(model.seed),
        "input_shape": list(model.input_shape),
        "decoder_channels": list(model.decoder_channels),
        "parameters": _param_layout(model.net),
        "weights_sha256": hashlib.sha256(blob).hexdigest(),
    }
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return directory


def load_model(directory):
    manifest_path = os.path.join(directory, "manifest.json")
    with open(manifest_path) as f:
        try:
            manifest = json.load(f)
        except json.JSONDecodeError as exc:
            raise ArtifactFormatError(f"corrupted manifest {manifest_path}: {exc}") from exc
    if not isinstance(manifest, dict):
        raise ArtifactFormatError(f"corrupted manifest {manifest_path}")
    arch = manifest.get("architecture_id")
    if arch != ARCHITECTURE_ID:
        raise UnsupportedArchitectureError(f"unsupported architecture_id {arch!r}")
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ArtifactFormatError(f"unsupported schema_version {manifest.get('schema_version')!r}")
    try:
        tap = TapSpec(manifest["tap_layer_ids"], manifest["tap_weights"])
        model = build_model(manifest["seed"], manifest["input_shape"],
                            manifest["decoder_channels"], tap,
                            manifest["d_min"], manifest["d_max"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactFormatError(f"invalid manifest {manifest_path}: {exc}") from exc
    if _param_layout(model.net) != manifest.get("parameters"):
        raise ArtifactFormatError("manifest parameter layout does not match the architecture")

    with open(os.path.join(directory, "weights.bin"), "rb") as f:
        blob = f.read()
    if hashlib.sha256(blob).hexdigest() != manifest.get("weights_sha256"):
        raise ArtifactFormatError("weights.bin does not match the manifest checksum")
    state = {}
    offset = 0
    reference = model.net.state_dict()
    for name, shape in manifest["parameters"]:
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        # integer buffers (batch-norm step counters) travel as float32 too
        state[name] = torch.from_numpy(arr.astype(np.float32)).to(reference[name].dtype)
        offset += 4 * count
    if offset != len(blob):
        raise ArtifactFormatError("weights.bin has trailing bytes")
    model.net.load_state_dict(state)
    model.net.eval()
    return model


class DepthEstimator(BaseEstimator):
    """scikit-learn style wrapper: ``fit(images, depths)`` then ``predict(images)``."""

    def __init__(self, max_epochs=40, learning_rate=1e-3, batch_size=8, target_l1=3.0,
                 holdout_fraction=0.1, d_min=1.0, d_max=80.0,
                 decoder_channels=DEFAULT_DECODER_CHANNELS, k_skip=2, seed=0):
        self.max_epochs = max_epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.target_l1 = target_l1
        self.holdout_fraction = holdout_fraction
        self.d_min = d_min
        self.d_max = d_max
        self.decoder_channels = decoder_channels
        self.k_skip = k_skip
        self.seed = seed

    def fit(self, X, y):
        from .data import SceneDataset

        X = check_images(X)
        y = np.asarray(y, dtype=np.float32)
        if y.shape != X.shape[:3]:
            raise ShapeError(f"depths shape {y.shape} does not match images {X.shape[:3]}")
        config = TrainConfig(
            max_epochs=self.max_epochs, learning_rate=self.learning_rate,
            batch_size=self.batch_size, target_l1=self.target_l1,
            holdout_fraction=self.holdout_fraction, d_min=self.d_min, d_max=self.d_max,
            decoder_channels=tuple(self.decoder_channels), k_skip=self.k_skip,
        )
        self.model_ = train_toy_model(SceneDataset(X, y), config, self.seed)
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("DepthEstimator is not fitted yet")
        return predict_depth(self.model_, X)

    @classmethod
    def from_model(cls, model):
        est = cls(d_min=model.d_min, d_max=model.d_max,
                  decoder_channels=model.decoder_channels, seed=model.seed)
        est.model_ = model
        return est


def config_dict(config):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(config).items()}
