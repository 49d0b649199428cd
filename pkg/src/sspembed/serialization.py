"""JSON helpers: numbers are written as full-precision decimal strings."""

import dataclasses
import json
import math

import numpy as np


def encode(obj):
    """Recursively convert ``obj`` into JSON-ready data.

    Floats become ``repr`` strings so reports diff cleanly and round-trip
    exactly.  Integers and booleans are kept as JSON natives.
    """
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return repr(float(obj))
    if isinstance(obj, np.ndarray):
        return [encode(v) for v in obj.tolist()] if obj.ndim else encode(obj.item())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "to_dict"):
            return encode(obj.to_dict())
        return {f.name: encode(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [encode(v) for v in obj]
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(encode(obj), indent=2, sort_keys=True) + "\n"


def decode_float(value) -> float:
    """Inverse of :func:`encode` for a scalar (accepts strings or numbers)."""
    out = float(value)
    if not math.isfinite(out):
        raise ValueError(f"non-finite value {value!r}")
    return out


def decode_array(value) -> np.ndarray:
    return np.vectorize(float, otypes=[float])(np.asarray(value, dtype=object))
