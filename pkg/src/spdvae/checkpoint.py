"""Model persistence: a JSON header followed by a float64 parameter blob.

Layout::

    b"SPDVAE\\x00\\x01"            8-byte magic
    uint64 little-endian         header length in bytes
    header                       UTF-8 JSON
    blob                         little-endian float64 sections

The header holds ``architecture``, ``hyperparameters``, ``reference_point``
and a ``sections`` table of ``{name, shape, offset, count}`` entries, with
offsets counted in float64 elements from the start of the blob.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .dataio import atomic_write_bytes
from .errors import InvalidInput
from .manifold import ReferencePoint
from .vae import RgpVae, VaeConfig

MAGIC = b"SPDVAE\x00\x01"


def _state(model: RgpVae):
    arrays = [(name, p.data) for name, p in model.named_parameters()]
    arrays += list(model.named_buffers())
    return arrays


def to_bytes(model: RgpVae, hyperparameters: dict | None = None) -> bytes:
    sections, chunks, offset = [], [], 0
    for name, arr in _state(model):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        sections.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = {
        "format": "spdvae-checkpoint",
        "architecture": dataclasses.asdict(model.config),
        "hyperparameters": hyperparameters or {},
        "reference_point": model.ref.point.tolist(),
        "sections": sections,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(chunks)


def save_checkpoint(path, model: RgpVae, hyperparameters: dict | None = None) -> Path:
    payload = to_bytes(model, hyperparameters)
    atomic_write_bytes(path, payload)
    return Path(path)


def from_bytes(raw: bytes) -> tuple[RgpVae, dict]:
    if raw[:8] != MAGIC:
        raise InvalidInput("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    blob = np.frombuffer(raw[16 + hlen:], dtype="<f8")
    arch = header["architecture"]
    config = VaeConfig(**arch)
    ref_point = np.asarray(header["reference_point"], dtype=float)
    ref = ReferencePoint.from_point(ref_point) if config.geometry == "riemannian" \
        else ReferencePoint.identity(config.n_channels)
    model = RgpVae(config, ref, rng=0)
    targets = dict(_state(model))
    params = dict(model.named_parameters())
    seen = set()
    for sec in header["sections"]:
        name = sec["name"]
        if name not in targets:
            raise InvalidInput(f"checkpoint section {name!r} does not match the architecture")
        end = sec["offset"] + sec["count"]
        if end > len(blob):
            raise InvalidInput(f"checkpoint truncated inside section {name!r}")
        values = blob[sec["offset"]:end].reshape(sec["shape"])
        if name in params:
            params[name].data = values.copy()
        else:
            targets[name][...] = values
        seen.add(name)
    missing = set(targets) - seen
    if missing:
        raise InvalidInput(f"checkpoint lacks section {sorted(missing)[0]!r}")
    model.set_training(False)
    return model, header


def load_checkpoint(path) -> tuple[RgpVae, dict]:
    return from_bytes(Path(path).read_bytes())


def checkpoint_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
