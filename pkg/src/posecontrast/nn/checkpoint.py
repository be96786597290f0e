"""Binary checkpoint format.

Layout::

    b"PCKP" | uint32 LE version | uint32 LE header length | UTF-8 JSON header
    | float64 LE arrays, in the order listed under header["arrays"]

Every parameter is followed by its first and second Adam moments.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, ShapeMismatchError
from .model import Architecture, ModelParams

MAGIC = b"PCKP"
VERSION = 1
_KINDS = ("param", "m", "v")


def to_bytes(params: ModelParams) -> bytes:
    arrays = []
    blobs = []
    for name in params.weights:
        for kind, store in zip(_KINDS, (params.weights, params.m, params.v)):
            a = np.ascontiguousarray(store[name], dtype="<f8")
            arrays.append({"name": name, "kind": kind, "shape": list(a.shape)})
            blobs.append(a.tobytes())
    header = {
        "arch": params.arch.to_dict(),
        "step": params.step,
        "seed": params.seed,
        "meta": params.meta,
        "arrays": arrays,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([MAGIC, struct.pack("<II", VERSION, len(hb)), hb, *blobs])


def save_checkpoint(params: ModelParams, path) -> None:
    Path(path).write_bytes(to_bytes(params))


def from_bytes(data: bytes, expected_arch: Architecture | None = None) -> ModelParams:
    if len(data) < 12 or data[:4] != MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if len(data) < 12 + hlen:
        raise FormatError("truncated checkpoint header")
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
        arch = Architecture(**header["arch"])
        entries = header["arrays"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from exc
    if expected_arch is not None and arch != expected_arch:
        raise ShapeMismatchError(f"checkpoint architecture {arch} != expected {expected_arch}")
    shapes = arch.param_shapes()
    stores = {k: {} for k in _KINDS}
    pos = 12 + hlen
    for e in entries:
        shape = tuple(e["shape"])
        if shapes.get(e["name"]) != shape:
            raise ShapeMismatchError(f"array {e['name']} has shape {shape}, architecture wants {shapes.get(e['name'])}")
        nbytes = 8 * int(np.prod(shape))
        if pos + nbytes > len(data):
            raise FormatError("truncated checkpoint payload")
        stores[e["kind"]][e["name"]] = np.frombuffer(data, "<f8", int(np.prod(shape)), pos).reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(data):
        raise FormatError("trailing bytes after checkpoint payload")
    if any(set(s) != set(shapes) for s in stores.values()):
        raise FormatError("checkpoint is missing arrays")
    weights = {name: stores["param"][name] for name in shapes}
    return ModelParams(arch, weights, m=dict(stores["m"]), v=dict(stores["v"]),
                       step=int(header["step"]), seed=int(header["seed"]),
                       meta=header.get("meta", {}))


def load_checkpoint(path, expected_arch: Architecture | None = None) -> ModelParams:
    return from_bytes(Path(path).read_bytes(), expected_arch)
