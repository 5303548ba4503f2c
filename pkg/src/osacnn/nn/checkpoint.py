"""Model checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic b"OSACKPT1"
    8 bytes   uint64 descriptor length D
    D bytes   UTF-8 JSON descriptor: seq_len, in_channels, seed, arch,
              layers (one descriptor per layer), params (name + shape in
              blob order), adam (null or t/lr/beta1/beta2/eps), meta
    ...       float32 parameter blobs, row-major, in descriptor order
    ...       if adam is present: all first-moment blobs, then all
              second-moment blobs, same order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import Architecture, Model, build_model
from .optim import Adam

MAGIC = b"OSACKPT1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, model: Model, adam: Adam | None = None, meta: dict | None = None) -> None:
    params = model.params()
    descriptor = {
        "seq_len": model.seq_len,
        "in_channels": model.in_channels,
        "seed": model.seed,
        "arch": model.arch.to_dict(),
        "layers": model.describe(),
        "params": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
        "adam": None
        if adam is None
        else {"t": adam.t, "lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps},
        "meta": meta or {},
    }
    blob = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<Q", len(blob)), blob]
    chunks += [np.ascontiguousarray(v, dtype="<f4").tobytes() for v in params.values()]
    if adam is not None:
        for moments in (adam.m, adam.v):
            for key, value in params.items():
                moment = moments.get(key, np.zeros_like(value))
                chunks.append(np.ascontiguousarray(moment, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> tuple[Model, Adam | None, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {raw[:8]!r})")
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    (size,) = struct.unpack_from("<Q", raw, 8)
    try:
        descriptor = json.loads(raw[16 : 16 + size].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt descriptor: {exc}") from None
    offset = 16 + size

    def take(shape) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated parameter data at byte {offset}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset = end
        return arr

    arch = Architecture.from_dict(descriptor["arch"])
    model = build_model(descriptor["seq_len"], descriptor["in_channels"], arch, seed=descriptor["seed"])
    if model.describe() != descriptor["layers"]:
        raise CheckpointError(f"{path}: layer descriptors do not match the rebuilt architecture")
    entries = [(p["name"], tuple(p["shape"])) for p in descriptor["params"]]
    model.load_state({name: take(shape) for name, shape in entries})

    adam = None
    if descriptor["adam"] is not None:
        a = descriptor["adam"]
        adam = Adam(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], t=a["t"])
        adam.m = {name: take(shape).astype(np.float32) for name, shape in entries}
        adam.v = {name: take(shape).astype(np.float32) for name, shape in entries}
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return model, adam, descriptor["meta"]
