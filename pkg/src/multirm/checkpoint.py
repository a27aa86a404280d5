"""Weight checkpoints: an 8-byte little-endian header length, a UTF-8 JSON
header, then every array as little-endian float64 in declaration order."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .backbone import BackboneConfig, LoraAdapter, ModelWeights, param_shapes
from .scoring import ValueHeadParams

MAGIC = "multirm-weights"
VERSION = 1


def save_checkpoint(weights: ModelWeights, path) -> None:
    arrays = weights.arrays()
    header = {
        "format": MAGIC,
        "version": VERSION,
        "config": weights.config.to_dict(),
        "adapters": [ad.meta() for ad in weights.adapters],
        "head": weights.head.meta() if weights.head is not None else None,
        "arrays": [[name, list(a.shape)] for name, a in arrays.items()],
        "dtype": "<f8",
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelWeights:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated checkpoint")
    (hlen,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8 : 8 + hlen])
    if header.get("format") != MAGIC:
        raise ValueError(f"{path}: not a {MAGIC} checkpoint")
    offset = 8 + hlen
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise ValueError(f"{path}: truncated data for {name}")
        arrays[name] = np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")

    config = BackboneConfig.from_dict(header["config"])
    params = {n: arrays[n] for n in param_shapes(config)}
    head = None
    if header["head"] is not None:
        h = header["head"]
        head = ValueHeadParams(arrays["head.W1"], arrays["head.b1"], arrays["head.w2"], arrays["head.b2"],
                               h["activation"], h["representation"])
    adapters = [
        LoraAdapter(m["target"], m["rank"], m["alpha"], m["dropout"],
                    arrays[f"lora.{m['target']}.A"], arrays[f"lora.{m['target']}.B"])
        for m in header["adapters"]
    ]
    return ModelWeights(config, params, head, adapters)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
