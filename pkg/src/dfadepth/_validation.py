"""Input validation helpers shared by the estimators and functional API."""

import numpy as np

from .errors import NumericError, ShapeError


def check_image(image, expected_shape=None, name="image"):
    """Validate a single H x W x 3 image with values in [0, 1].

    Returns a float32 view/copy of the input.
    """
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    _check_spatial(arr.shape[:2], name)
    if expected_shape is not None and tuple(arr.shape[:2]) != tuple(expected_shape):
        raise ShapeError(
            f"{name} has spatial size {arr.shape[:2]}, expected {tuple(expected_shape)}"
        )
    arr = arr.astype(np.float32, copy=False)
    _check_unit_range(arr, name)
    return arr


def check_images(images, expected_shape=None, name="images"):
    """Validate a batch of images, shape (N, H, W, 3). A single image is promoted."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise ShapeError(f"{name} must have shape (N, H, W, 3), got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    _check_spatial(arr.shape[1:3], name)
    if expected_shape is not None and tuple(arr.shape[1:3]) != tuple(expected_shape):
        raise ShapeError(
            f"{name} have spatial size {arr.shape[1:3]}, expected {tuple(expected_shape)}"
        )
    arr = arr.astype(np.float32, copy=False)
    _check_unit_range(arr, name)
    return arr


def check_depth_array(depth, name="depth"):
    arr = np.asarray(depth, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def check_same_shape(a, b, names=("a", "b")):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{names[0]} shape {np.shape(a)} != {names[1]} shape {np.shape(b)}")


def check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


def _check_spatial(hw, name):
    h, w = int(hw[0]), int(hw[1])
    if h < 32 or w < 32 or h % 16 or w % 16:
        raise ShapeError(
            f"{name} spatial size must be >= 32 and divisible by 16, got {h}x{w}"
        )


def _check_unit_range(arr, name):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{name} values must lie in [0, 1]")
