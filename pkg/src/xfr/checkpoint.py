"""Binary ``.xfrc`` checkpoints.

Layout (all integers little-endian)::

    magic        4 bytes  b"XFRC"
    version      uint32
    desc_len     uint32
    descriptor   desc_len bytes of UTF-8 JSON
    blobs        float32 little-endian arrays, in descriptor["params"] order

The descriptor carries the architecture, the ordered parameter names and
shapes, and free-form training metadata.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import Architecture, FaceModel

MAGIC = b"XFRC"
VERSION = 1
SUFFIX = ".xfrc"
_HEADER = struct.Struct("<4sII")


class CheckpointError(ValueError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class DescriptorError(CheckpointError):
    pass


@dataclass
class ModelCheckpoint:
    model: FaceModel
    metadata: dict = field(default_factory=dict)
    version: int = VERSION

    @property
    def arch(self) -> Architecture:
        return self.model.arch


def save_checkpoint(path: str | Path, model: FaceModel, metadata: dict | None = None) -> Path:
    path = Path(path)
    params = model.named_parameters()
    desc = {
        "architecture": model.arch.to_dict(),
        "dtype": "float32",
        "params": [{"name": n, "shape": list(p.shape)} for n, p in params],
        "metadata": metadata or {},
    }
    blob = json.dumps(desc, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for _, p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return path


def load_checkpoint(path: str | Path, expect: dict | None = None) -> ModelCheckpoint:
    """Read a checkpoint; ``expect`` maps architecture fields to required values."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointFormatError(f"{path}: truncated header")
    magic, version, desc_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: unsupported version {version} (supported: {VERSION})")
    start = _HEADER.size
    if len(raw) < start + desc_len:
        raise CheckpointFormatError(f"{path}: truncated descriptor")
    try:
        desc = json.loads(raw[start : start + desc_len].decode("utf-8"))
        arch = Architecture.from_dict(desc["architecture"])
    except (ValueError, KeyError, TypeError) as exc:
        raise DescriptorError(f"{path}: invalid descriptor ({exc})") from exc

    for key, want in (expect or {}).items():
        have = getattr(arch, key)
        if have != want:
            raise DescriptorError(f"{path}: {key}={have} but {want} was expected")

    model = FaceModel(arch)
    named = model.named_parameters()
    listed = [(e["name"], tuple(e["shape"])) for e in desc["params"]]
    if listed != [(n, p.shape) for n, p in named]:
        raise DescriptorError(f"{path}: parameter list does not match the declared architecture")

    offset = start + desc_len
    for _, p in named:
        nbytes = 4 * p.size
        if len(raw) < offset + nbytes:
            raise CheckpointFormatError(f"{path}: truncated parameter data")
        p.data = np.frombuffer(raw, dtype="<f4", count=p.size, offset=offset).astype(np.float32).reshape(p.shape)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return ModelCheckpoint(model, desc.get("metadata", {}), version)
