"""Manifest-plus-blob checkpoint reader and companion writer.

A checkpoint is a directory holding ``manifest.json`` and one or more raw
blob files.  Blobs are headerless row-major little-endian IEEE-754 data;
the manifest records which byte range belongs to which layer.  Values are
widened to float64 on load because downstream tail fitting takes logs of
eigenvalue ratios and low-precision tails distort them.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .exceptions import ManifestError, TensorDataError

__all__ = [
    "ModelManifest",
    "LayerEntry",
    "WeightTensor",
    "load_manifest",
    "load_tensor",
    "write_checkpoint",
    "DEFAULT_ELEMENT_BUDGET",
]

KINDS = ("linear", "conv2d")
DTYPES = ("f32", "f64")

_NP_DTYPE = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_SHAPE_LEN = {"linear": 2, "conv2d": 4}

# Desk-scale guard: refuse tensors above this many elements instead of
# thrashing the machine.
DEFAULT_ELEMENT_BUDGET = 2 ** 28


@dataclass(frozen=True)
class LayerEntry:
    """One layer record from a manifest.

    ``shape`` is (rows, cols) for linear layers and (C1, C2, kH, kW) for
    conv2d layers, matching the row-major index order of the blob.
    """

    name: str
    kind: str
    shape: tuple
    dtype: str
    blob: str
    offset: int = 0

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise ManifestError("layer name must be a non-empty string")
        ctx = f"layer '{self.name}'"
        if self.kind not in KINDS:
            raise ManifestError(f"{ctx}: unknown kind {self.kind!r}")
        shape = tuple(self.shape)
        object.__setattr__(self, "shape", shape)
        if len(shape) != _SHAPE_LEN[self.kind]:
            raise ManifestError(
                f"{ctx}: kind {self.kind} requires shape length "
                f"{_SHAPE_LEN[self.kind]}, got {len(shape)}")
        for dim in shape:
            if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
                raise ManifestError(f"{ctx}: shape entries must be "
                                    f"positive integers, got {dim!r}")
        if self.dtype not in DTYPES:
            raise ManifestError(f"{ctx}: unknown dtype {self.dtype!r}")
        if not isinstance(self.blob, str) or not self.blob:
            raise ManifestError(f"{ctx}: blob must be a non-empty path")
        if os.path.isabs(self.blob) or ".." in self.blob.split("/"):
            raise ManifestError(f"{ctx}: blob path must stay inside the "
                                f"checkpoint directory: {self.blob!r}")
        if not isinstance(self.offset, int) or self.offset < 0:
            raise ManifestError(f"{ctx}: offset must be a non-negative "
                                f"integer, got {self.offset!r}")

    @property
    def element_count(self) -> int:
        count = 1
        for dim in self.shape:
            count *= dim
        return count

    @property
    def byte_size(self) -> int:
        return self.element_count * _NP_DTYPE[self.dtype].itemsize


@dataclass(frozen=True)
class ModelManifest:
    """Ordered collection of layer records; position defines layer index."""

    model_name: str
    layers: tuple

    def __post_init__(self):
        if not isinstance(self.model_name, str):
            raise ManifestError("model_name must be a string")
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        seen = set()
        for entry in layers:
            if entry.name in seen:
                raise ManifestError(f"duplicate layer name '{entry.name}'")
            seen.add(entry.name)

    def __len__(self) -> int:
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)


@dataclass(frozen=True)
class WeightTensor:
    """A loaded layer: its manifest entry plus float64 data of the
    declared shape."""

    entry: LayerEntry
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.shape != self.entry.shape:
            raise TensorDataError(
                f"layer '{self.entry.name}': data shape {arr.shape} does "
                f"not match declared shape {self.entry.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def name(self) -> str:
        return self.entry.name


def _entry_from_json(obj, index: int) -> LayerEntry:
    if not isinstance(obj, dict):
        raise ManifestError(f"layer at index {index} must be an object")
    missing = [k for k in ("name", "kind", "shape", "dtype", "blob")
               if k not in obj]
    if missing:
        label = obj.get("name") if isinstance(obj.get("name"), str) else index
        raise ManifestError(
            f"layer {label!r}: missing required key(s) {missing}")
    shape = obj["shape"]
    if not isinstance(shape, list):
        raise ManifestError(f"layer {obj['name']!r}: shape must be an array")
    return LayerEntry(
        name=obj["name"],
        kind=obj["kind"],
        shape=tuple(shape),
        dtype=obj["dtype"],
        blob=obj["blob"],
        offset=obj.get("offset", 0),
    )


def load_manifest(path) -> ModelManifest:
    """Parse and validate a ``manifest.json`` file.

    Raises ManifestError for a missing file, malformed JSON, or any
    schema violation; messages name the offending layer.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ManifestError("manifest root must be a JSON object")
    if "model_name" not in raw or "layers" not in raw:
        raise ManifestError("manifest requires 'model_name' and 'layers'")
    if not isinstance(raw["layers"], list):
        raise ManifestError("'layers' must be an array")
    entries = [_entry_from_json(obj, i) for i, obj in enumerate(raw["layers"])]
    return ModelManifest(model_name=raw["model_name"], layers=tuple(entries))


def load_tensor(manifest_dir, entry: LayerEntry, *,
                element_budget: int = DEFAULT_ELEMENT_BUDGET) -> WeightTensor:
    """Load one layer's blob bytes as a float64 array of the declared shape.

    The blob is read little-endian row-major starting at ``entry.offset``.
    Raises TensorDataError for a short or unreadable blob, a non-finite
    element (the message names its flat index), or a tensor above the
    element budget.
    """
    count = entry.element_count
    if count > element_budget:
        raise TensorDataError(
            f"layer '{entry.name}': {count} elements exceeds the "
            f"budget of {element_budget}")
    path = os.path.join(manifest_dir, entry.blob)
    try:
        size = os.path.getsize(path)
    except OSError as exc:
        raise TensorDataError(
            f"layer '{entry.name}': cannot read blob {path}: {exc}") from exc
    needed = entry.offset + entry.byte_size
    if size < needed:
        raise TensorDataError(
            f"layer '{entry.name}': blob {entry.blob} holds {size} bytes "
            f"but offset {entry.offset} plus {entry.byte_size} data bytes "
            f"requires {needed}")
    try:
        flat = np.fromfile(path, dtype=_NP_DTYPE[entry.dtype], count=count,
                           offset=entry.offset)
    except OSError as exc:
        raise TensorDataError(
            f"layer '{entry.name}': cannot read blob {path}: {exc}") from exc
    data = flat.astype(np.float64, copy=False)
    finite = np.isfinite(data)
    if not finite.all():
        bad = int(np.argmin(finite))
        raise TensorDataError(
            f"layer '{entry.name}': non-finite value {data[bad]!r} at "
            f"flat index {bad}")
    return WeightTensor(entry=entry, data=data.reshape(entry.shape))


def _infer_kind(array) -> str:
    if array.ndim == 2:
        return "linear"
    if array.ndim == 4:
        return "conv2d"
    raise TensorDataError(
        f"cannot infer layer kind for a {array.ndim}-D array; "
        f"only 2-D (linear) and 4-D (conv2d) are supported")


def write_checkpoint(directory, model_name: str, named_arrays, *,
                     dtype: str = "f64") -> str:
    """Write arrays as a single-blob checkpoint; returns the manifest path.

    ``named_arrays`` is an iterable of (name, ndarray) pairs; kind is
    inferred from dimensionality.  All tensors share one ``weights.bin``
    blob at increasing offsets.  With the default f64 storage a write
    followed by load_tensor reproduces bit-identical values.
    """
    if dtype not in DTYPES:
        raise TensorDataError(f"unknown dtype {dtype!r}")
    np_dtype = _NP_DTYPE[dtype]
    os.makedirs(directory, exist_ok=True)
    blob_name = "weights.bin"
    entries = []
    offset = 0
    blob_path = os.path.join(directory, blob_name)
    with open(blob_path, "wb") as fh:
        for name, array in named_arrays:
            arr = np.ascontiguousarray(array, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise TensorDataError(
                    f"layer '{name}': refusing to write non-finite values")
            entry = LayerEntry(
                name=name,
                kind=_infer_kind(arr),
                shape=arr.shape,
                dtype=dtype,
                blob=blob_name,
                offset=offset,
            )
            fh.write(arr.astype(np_dtype).tobytes(order="C"))
            offset += entry.byte_size
            entries.append(entry)
    manifest = ModelManifest(model_name=model_name, layers=tuple(entries))
    manifest_path = os.path.join(directory, "manifest.json")
    doc = {
        "model_name": manifest.model_name,
        "layers": [
            {
                "name": e.name,
                "kind": e.kind,
                "shape": list(e.shape),
                "dtype": e.dtype,
                "blob": e.blob,
                "offset": e.offset,
            }
            for e in manifest.layers
        ],
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return manifest_path
