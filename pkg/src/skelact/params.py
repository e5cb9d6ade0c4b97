"""Parameter helpers: initialization, traversal, checkpoint serialization.

Checkpoints are a flat JSON map: name -> {"shape": [...], "data": base64 of
little-endian float64}, shared by every block in the model.
"""

import base64
import dataclasses
import json

import numpy as np

from .tensor import Parameter


def rand_param(rng, shape, scale=None, name=""):
    """Gaussian init scaled by 1/sqrt(fan_in) unless an explicit scale is given."""
    if scale is None:
        fan_in = shape[-2] if len(shape) > 1 else shape[-1]
        scale = 1.0 / np.sqrt(max(fan_in, 1))
    return Parameter(rng.normal(0.0, scale, size=shape), name=name)


def zeros_param(shape, name=""):
    return Parameter(np.zeros(shape), name=name)


def ones_param(shape, name=""):
    return Parameter(np.ones(shape), name=name)


def const_param(value, name=""):
    return Parameter(np.asarray(value, dtype=np.float64), name=name)


def iter_named_parameters(obj, prefix=""):
    """Yield (path, Parameter) over a dataclass tree, depth-first."""
    if isinstance(obj, Parameter):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            child = getattr(obj, f.name)
            sub = f"{prefix}.{f.name}" if prefix else f.name
            yield from iter_named_parameters(child, sub)
    elif isinstance(obj, (list, tuple)):
        for i, child in enumerate(obj):
            yield from iter_named_parameters(child, f"{prefix}[{i}]")


def assign_names(obj, prefix=""):
    """Stamp each Parameter's name with its path in the dataclass tree."""
    for path, p in iter_named_parameters(obj, prefix):
        p.name = path
    return obj


def parameters(obj):
    return [p for _, p in iter_named_parameters(obj)]


def zero_grads(obj):
    for p in parameters(obj):
        p.zero_grad()


def save_checkpoint(obj, path):
    blob = {}
    for name, p in iter_named_parameters(obj):
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        blob[name] = {"shape": list(p.data.shape),
                      "data": base64.b64encode(raw).decode("ascii")}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh)


def load_checkpoint(obj, path):
    with open(path, "r", encoding="utf-8") as fh:
        blob = json.load(fh)
    named = dict(iter_named_parameters(obj))
    missing = set(blob) ^ set(named)
    if missing:
        raise ValueError(f"checkpoint/model parameter mismatch: {sorted(missing)}")
    for name, p in named.items():
        entry = blob[name]
        arr = np.frombuffer(base64.b64decode(entry["data"]), dtype="<f8")
        arr = arr.reshape(entry["shape"]).astype(np.float64)
        if arr.shape != p.data.shape:
            raise ValueError(f"shape mismatch for {name}: "
                             f"{arr.shape} vs {p.data.shape}")
        p.data = arr.copy()
    return obj
