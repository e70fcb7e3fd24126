"""Binary artifact files: 8-byte magic, u32 height/width/channels, float32 data, JSON trailer."""

import json
import os
import struct

import numpy as np
from PIL import Image

from .errors import ArtifactFormatError

_HEADER = struct.Struct("<8sIII")


def write_array_file(path, magic, array, meta):
    array = np.ascontiguousarray(array, dtype="<f4")
    if array.ndim != 3:
        raise ValueError("expected an H x W x C array")
    h, w, c = array.shape
    trailer = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(magic, h, w, c))
        f.write(array.tobytes())
        f.write(trailer)


def read_array_file(path, magic):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise ArtifactFormatError(f"{path}: file too short for header")
    found, h, w, c = _HEADER.unpack_from(raw)
    if found != magic:
        raise ArtifactFormatError(f"{path}: bad magic {found!r}, expected {magic!r}")
    n = h * w * c * 4
    if len(raw) < _HEADER.size + n:
        raise ArtifactFormatError(f"{path}: truncated data ({len(raw)} bytes)")
    data = np.frombuffer(raw, dtype="<f4", count=h * w * c, offset=_HEADER.size)
    try:
        meta = json.loads(raw[_HEADER.size + n:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactFormatError(f"{path}: unreadable metadata trailer") from exc
    return data.reshape(h, w, c).astype(np.float32), meta


def preview_path(path):
    return os.path.splitext(path)[0] + ".png"


def to_uint8(values):
    """Map [0, 1] floats to 8-bit, rounding to nearest."""
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, values):
    """Save an (H, W) or (H, W, 3) array in [0, 1] as PNG."""
    Image.fromarray(to_uint8(values)).save(path, format="PNG")
    return path
