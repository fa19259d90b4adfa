"""Deterministic JSON rendering for report files.

Floats are quantized to 12 significant digits and then serialized with
Python's shortest-round-trip repr, so the same result produces the same
bytes on every platform.  Key order is the insertion order of the
``to_dict`` methods, which is fixed by construction.
"""

from __future__ import annotations

import json

__all__ = ["quantize", "to_json"]


def quantize(obj):
    """Recursively round floats to 12 significant digits."""
    if isinstance(obj, float):
        return float(format(obj, ".12g"))
    if isinstance(obj, dict):
        return {key: quantize(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [quantize(value) for value in obj]
    return obj


def to_json(obj) -> str:
    return json.dumps(quantize(obj), indent=2, allow_nan=False) + "\n"
