"""Small value types shared between modules."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass
class DepthMap:
    """Dense depth in meters with a validity mask."""

    data: np.ndarray
    valid_mask: np.ndarray = None
    d_min: float = 1.0
    d_max: float = 80.0

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ShapeError(f"depth must be 2-D, got shape {self.data.shape}")
        if self.valid_mask is None:
            self.valid_mask = np.ones(self.data.shape, dtype=bool)
        else:
            self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
            if self.valid_mask.shape != self.data.shape:
                raise ShapeError("valid_mask shape does not match depth")
        if not (self.d_min > 0 and self.d_max > self.d_min):
            raise ValueError(f"invalid depth range [{self.d_min}, {self.d_max}]")

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class TapSpec:
    """Which layers feed the feature loss, with one nonnegative weight each."""

    layer_ids: tuple
    weights: tuple = field(default=None)

    def __post_init__(self):
        ids = tuple(self.layer_ids)
        weights = (1.0,) * len(ids) if self.weights is None else tuple(float(w) for w in self.weights)
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate layer ids in tap spec: {ids}")
        if len(weights) != len(ids):
            raise ValueError("tap weights and layer ids differ in length")
        if any(w < 0 or not np.isfinite(w) for w in weights):
            raise ValueError("tap weights must be finite and nonnegative")
        object.__setattr__(self, "layer_ids", ids)
        object.__setattr__(self, "weights", weights)

    def as_dict(self):
        return dict(zip(self.layer_ids, self.weights))

    def __len__(self):
        return len(self.layer_ids)
