"""Self-describing checkpoint container.

Layout: magic "MMCK", u32-LE version, u32-LE header length, a UTF-8 JSON
header (model kind, architecture descriptors, class list, metadata, and a
tensor table of names and shapes), then the tensors as float32-LE in table
order. A checkpoint reloads without any external config file.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import FormatError
from .networks import (
    ModelParams,
    arch_to_dict,
    build_classifier,
    build_direct_model,
)

MAGIC = b"MMCK"
VERSION = 1


def save_checkpoint(params: ModelParams, path) -> None:
    params.assert_finite()
    tensors = list(params.param_items())
    header = {
        "kind": params.kind,
        "latent_dim": params.latent_dim,
        "speech_arch": arch_to_dict(params.speech_arch),
        "vision_arch": arch_to_dict(params.vision_arch),
        "classes": list(params.classes) if params.classes is not None else None,
        "meta": params.meta,
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _rebuild(header: dict) -> ModelParams:
    kind = header["kind"]
    if kind in ("mtriplet", "mcae", "speech_cae", "vision_cae"):
        return build_direct_model(kind, header["speech_arch"], header["vision_arch"], seed=0)
    if kind == "speech_classifier":
        return build_classifier("speech", header["speech_arch"], header["classes"], seed=0)
    if kind == "vision_classifier":
        return build_classifier("vision", header["vision_arch"], header["classes"], seed=0)
    raise FormatError(f"checkpoint has unknown model kind {kind!r}")


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise FormatError(f"bad checkpoint magic in {path}")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        params = _rebuild(header)
        params.meta = header.get("meta", {})
        table = header["tensors"]
        own = list(params.param_items())
        if [t["name"] for t in table] != [name for name, _ in own]:
            raise FormatError("checkpoint tensor table does not match the architecture")
        for spec, (name, arr) in zip(table, own):
            shape = tuple(spec["shape"])
            if shape != arr.shape:
                raise FormatError(f"tensor {name}: shape {shape} != expected {arr.shape}")
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise FormatError(f"truncated checkpoint while reading tensor {name}")
            arr[...] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(arr.dtype)
    params.assert_finite()
    return params


__all__ = ["save_checkpoint", "load_checkpoint", "MAGIC", "VERSION"]
