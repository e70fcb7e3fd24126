"""Flat TOML run configuration with flag overrides and resolved snapshots."""

import json
import os

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


def load_config(path):
    if path is None:
        return {}
    with open(path, "rb") as f:
        data = tomllib.load(f)
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ValueError(f"config must be flat key = value pairs; found tables {nested}")
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve(defaults, file_values, overrides):
    """Merge defaults < config file < explicitly given flags (None means not given)."""
    unknown = set(file_values) - set(defaults)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    out = dict(defaults)
    out.update(file_values)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float, str)):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {v!r}")


def write_snapshot(path, values):
    """Write ``values`` as a flat TOML file, sorted by key; None entries are skipped."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        for k in sorted(values):
            if values[k] is not None:
                f.write(f"{k} = {_toml_value(values[k])}\n")
    return path
