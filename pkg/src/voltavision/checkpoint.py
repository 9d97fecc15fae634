"""Binary model checkpoints (`.vvc`).

Byte layout, in order:

    0..3   magic b"VVCP"
    4      format version, currently 1
    5..8   header length, unsigned 32-bit little-endian
    9..    header: canonical JSON (sorted keys, no whitespace), UTF-8
    then   weight blob: every array as raw little-endian float32, in
           manifest order

The header carries the architecture config, class names, a free-text
provenance note, and a per-layer manifest of (kind, array name, shape).
Blob byte length is exactly 4 * (parameter count + running-stat count).
Because the header is canonical JSON derived only from model state,
save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import (BadMagicError, BadVersionError, ManifestMismatchError,
                     TruncatedBlobError)
from .model import ArchitectureConfig, ModelGraph, _build_layers

MAGIC = b"VVCP"
VERSION = 1
FILE_EXTENSION = ".vvc"


def _layer_arrays(layer):
    """Arrays serialized for one layer: params then state, fixed order."""
    arrays = list(layer.params().items()) + list(layer.state().items())
    return arrays


def _manifest(model: ModelGraph):
    manifest = []
    for layer in model.layers:
        entry = {"kind": layer.kind,
                 "arrays": [[name, list(arr.shape)] for name, arr in _layer_arrays(layer)]}
        manifest.append(entry)
    return manifest


def _header_bytes(model: ModelGraph) -> tuple[bytes, int]:
    manifest = _manifest(model)
    float_count = sum(int(np.prod(shape)) for entry in manifest for _, shape in entry["arrays"])
    arch = asdict(model.config)
    arch["conv_filters"] = list(arch["conv_filters"])
    header = {
        "arch": arch,
        "class_names": model.class_names,
        "float_count": float_count,
        "manifest": manifest,
        "provenance": model.provenance,
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return raw, float_count


def save_checkpoint(model: ModelGraph, path) -> None:
    """Serialize the model; see the module docstring for the byte layout."""
    raw, _ = _header_bytes(model)
    blob = b"".join(arr.astype("<f4").tobytes()
                    for layer in model.layers
                    for _, arr in _layer_arrays(layer))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(len(raw).to_bytes(4, "little"))
        fh.write(raw)
        fh.write(blob)


def load_checkpoint(path) -> ModelGraph:
    """Rebuild a model bit-exactly from a checkpoint file."""
    data = Path(path).read_bytes()
    if len(data) < 9 or data[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a voltavision checkpoint (bad magic)")
    if data[4] != VERSION:
        raise BadVersionError(f"{path}: unsupported checkpoint version {data[4]}, expected {VERSION}")
    header_len = int.from_bytes(data[5:9], "little")
    if len(data) < 9 + header_len:
        raise TruncatedBlobError(f"{path}: header truncated")
    try:
        header = json.loads(data[9:9 + header_len].decode("utf-8"))
        arch = dict(header["arch"])
        arch["conv_filters"] = tuple(arch["conv_filters"])
        config = ArchitectureConfig(**arch)
        manifest = header["manifest"]
        float_count = int(header["float_count"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ManifestMismatchError(f"{path}: unreadable header ({exc})") from exc

    manifest_count = sum(int(np.prod(shape)) for entry in manifest for _, shape in entry["arrays"])
    if manifest_count != float_count:
        raise ManifestMismatchError(
            f"{path}: manifest declares {manifest_count} floats but header says {float_count}")
    blob = data[9 + header_len:]
    if len(blob) < 4 * float_count:
        raise TruncatedBlobError(
            f"{path}: weight blob has {len(blob)} bytes, expected {4 * float_count}")
    if len(blob) > 4 * float_count:
        raise ManifestMismatchError(
            f"{path}: {len(blob) - 4 * float_count} trailing bytes after weight blob")

    model = ModelGraph(config, _build_layers(config, rng=None),
                       provenance=header.get("provenance", ""),
                       class_names=header.get("class_names"))
    if len(manifest) != len(model.layers):
        raise ManifestMismatchError(
            f"{path}: manifest has {len(manifest)} layers, architecture builds {len(model.layers)}")
    values = np.frombuffer(blob, dtype="<f4")
    offset = 0
    for layer, entry in zip(model.layers, manifest):
        arrays = _layer_arrays(layer)
        if entry["kind"] != layer.kind or len(entry["arrays"]) != len(arrays):
            raise ManifestMismatchError(
                f"{path}: manifest entry {entry['kind']!r} does not match layer {layer.kind!r}")
        for (name, arr), (m_name, m_shape) in zip(arrays, entry["arrays"]):
            if m_name != name or tuple(m_shape) != arr.shape:
                raise ManifestMismatchError(
                    f"{path}: array {m_name!r} shape {m_shape} does not match "
                    f"{layer.kind}.{name} shape {list(arr.shape)}")
            chunk = values[offset:offset + arr.size]
            offset += arr.size
            setattr(layer, name, chunk.astype(np.float32).reshape(arr.shape))
    return model


def checkpoint_byte_size(num_classes: int) -> int:
    """Exact on-disk size of a checkpoint for the default architecture."""
    from .model import build_voltavision

    model = build_voltavision(num_classes, seed=0)
    raw, float_count = _header_bytes(model)
    return 9 + len(raw) + 4 * float_count
