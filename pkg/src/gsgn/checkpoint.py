"""Binary checkpoint archive: named float32 tensors plus JSON metadata.

Layout:

    bytes 0..3    magic "GSGN"
    bytes 4..7    format version, unsigned 32-bit little-endian
    bytes 8..11   header length in bytes, unsigned 32-bit little-endian
    header        UTF-8 JSON: config, task names, tensor directory
                  (name / shape / offset into the payload), free-form meta
    payload       raw float32 little-endian buffers, in directory order

Saving is deterministic: identical content produces identical bytes, and a
load/save round trip is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np

from .models import ModelConfig

MAGIC = b"GSGN"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    task_names: List[str]
    tensors: Dict[str, np.ndarray]          # insertion order is payload order
    meta: dict = field(default_factory=dict)

    def model_state(self, prefix: str = "model.") -> dict:
        return {k[len(prefix):]: v for k, v in self.tensors.items()
                if k.startswith(prefix)}

    def content_hash(self) -> str:
        """64-bit content hash (hex) over the serialized bytes."""
        return hashlib.sha256(to_bytes(self)).hexdigest()[:16]


def to_bytes(ckpt: Checkpoint) -> bytes:
    directory = []
    offset = 0
    payload = bytearray()
    for name, arr in ckpt.tensors.items():
        if not name:
            raise CheckpointError("tensor names must be non-empty")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        directory.append({"name": name, "shape": list(arr.shape),
                          "offset": offset})
        raw = arr.tobytes()
        payload.extend(raw)
        offset += len(raw)
    for t in ckpt.task_names:
        if not isinstance(t, str) or not t:
            raise CheckpointError("task names must be non-empty strings")
    header = {
        "config": ckpt.config.to_dict(),
        "tasks": list(ckpt.task_names),
        "tensors": directory,
        "meta": ckpt.meta,
    }
    hjson = json.dumps(header, sort_keys=False,
                       separators=(",", ":")).encode("utf-8")
    return (MAGIC + struct.pack("<II", VERSION, len(hjson)) + hjson
            + bytes(payload))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def from_bytes(blob: bytes) -> Checkpoint:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    payload = blob[12 + hlen:]
    tensors: Dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count,
                            offset=start).reshape(shape)
        tensors[entry["name"]] = arr.copy()
    return Checkpoint(config=ModelConfig.from_dict(header["config"]),
                      task_names=list(header["tasks"]),
                      tensors=tensors,
                      meta=header.get("meta", {}))


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def pack_model(prefix: str, state: dict, into: Dict[str, np.ndarray]) -> None:
    for name, arr in state.items():
        into[f"{prefix}.{name}"] = arr
