"""Deep feature annihilation loss.

For every tapped layer the clean and attacked activations are multiplied
elementwise and the variance of that product is taken over all of the layer's
elements. The loss is ``sum_l W_l * ln(1 + var_l)``; attacks minimize it.
"""

import copy
import json
from dataclasses import dataclass

import numpy as np
import torch

from ._validation import check_image
from .errors import ShapeError
from .types import TapSpec


@dataclass
class DfaValue:
    total: float
    per_layer: list  # (layer_id, variance, weighted term)

    def to_json(self):
        return json.dumps({
            "total": self.total,
            "per_layer": [{"layer_id": l, "variance": v, "term": t}
                          for l, v, t in self.per_layer],
        }, indent=2)


def _as_tap_spec(weights, layer_ids):
    if weights is None:
        return TapSpec(layer_ids)
    if isinstance(weights, TapSpec):
        return weights
    if isinstance(weights, dict):
        return TapSpec(tuple(weights), tuple(weights.values()))
    return TapSpec(layer_ids, tuple(weights))


def layer_variances(clean, attacked, layer_ids):
    """Per-image variance of ``attacked * clean`` for each layer, shape (N, L).

    ``clean`` and ``attacked`` map layer ids to (N, C, H, W) tensors.
    """
    cols = []
    for lid in layer_ids:
        a, c = attacked[lid], clean[lid]
        if a.shape != c.shape:
            raise ShapeError(f"layer {lid}: attacked {tuple(a.shape)} vs clean {tuple(c.shape)}")
        prod = (a * c).reshape(a.shape[0], -1)
        cols.append(prod.var(dim=1, unbiased=False))
    return torch.stack(cols, dim=1)


def dfa_objective(clean, attacked, tap_spec):
    """Differentiable batch-mean loss for NCHW activation dicts."""
    w = torch.tensor(tap_spec.weights, dtype=next(iter(attacked.values())).dtype)
    v = layer_variances(clean, attacked, tap_spec.layer_ids)
    return (torch.log1p(v) * w).sum(dim=1).mean()


def dfa_loss(clean, attacked, weights=None):
    """Evaluate the loss on two single-image feature bundles.

    ``clean`` and ``attacked`` map layer ids to C x H x W arrays. ``weights``
    may be a TapSpec, a ``{layer_id: weight}`` dict, a sequence aligned with
    the bundle order, or None for unit weights.
    """
    if list(clean) != list(attacked):
        if set(clean) != set(attacked):
            raise ShapeError(f"bundles have different layers: {sorted(clean)} vs {sorted(attacked)}")
    spec = _as_tap_spec(weights, tuple(clean))
    if set(spec.layer_ids) != set(clean):
        raise ShapeError(f"weights cover {spec.layer_ids}, bundles cover {tuple(clean)}")
    c = {k: torch.as_tensor(np.asarray(v, dtype=np.float64))[None] for k, v in clean.items()}
    a = {k: torch.as_tensor(np.asarray(v, dtype=np.float64))[None] for k, v in attacked.items()}
    var = layer_variances(c, a, spec.layer_ids)[0].numpy()
    var = np.maximum(var, 0.0)
    terms = np.asarray(spec.weights) * np.log1p(var)
    per_layer = [(lid, float(v), float(t)) for lid, v, t in zip(spec.layer_ids, var, terms)]
    return DfaValue(float(terms.sum()), per_layer)


def dfa_gradient_check(model, image, epsilon=1e-4, n_coords=64, seed=0):
    """Max relative error between autograd and central differences.

    The loss is taken between the clean features of ``image`` (held constant)
    and the features of a variable input, evaluated at ``image`` itself, in
    float64. Relative errors use ``max(|analytic|, |numeric|)`` with a floor of
    1e-6 of the largest analytic gradient entry, so coordinates whose
    gradient is numerically zero do not dominate.
    """
    if not 1e-6 <= epsilon <= 1e-2:
        raise ValueError(f"epsilon must be in [1e-6, 1e-2], got {epsilon}")
    if n_coords < 64:
        raise ValueError("at least 64 coordinates are sampled")
    image = check_image(image, expected_shape=model.input_shape)
    victim = copy.deepcopy(model)
    victim.net = victim.net.double()
    victim.freeze()

    x0 = torch.from_numpy(image.astype(np.float64).transpose(2, 0, 1).copy())[None]
    with torch.no_grad():
        _, clean = victim.features_torch(x0)

    def loss(x):
        _, feats = victim.features_torch(x)
        return dfa_objective(clean, feats, victim.tap_spec)

    x = x0.clone().requires_grad_(True)
    (grad,) = torch.autograd.grad(loss(x), x)
    grad = grad.reshape(-1)

    rng = np.random.default_rng(seed)
    coords = rng.choice(x0.numel(), size=min(n_coords, x0.numel()), replace=False)
    floor = max(1e-6 * float(grad.abs().max()), 1e-12)
    worst = 0.0
    flat = x0.reshape(-1)
    with torch.no_grad():
        for idx in coords:
            plus = flat.clone()
            plus[idx] += epsilon
            minus = flat.clone()
            minus[idx] -= epsilon
            numeric = (loss(plus.view_as(x0)) - loss(minus.view_as(x0))).item() / (2 * epsilon)
            analytic = grad[idx].item()
            denom = max(abs(analytic), abs(numeric), floor)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst
