"""Flat binary checkpoint archive for model parameters.

Layout (all integers little-endian):
    magic  b"MIQA"
    uint32 format version
    uint32 config JSON byte length, followed by the JSON bytes (UTF-8)
    uint32 number of parameter records
    per record, sorted by name:
        uint16 name byte length, name bytes (UTF-8, dotted)
        uint8  ndim, ndim x uint32 dims
        raw float64 little-endian data

Round trips are bit-exact.
"""
from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"MIQA"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict[str, np.ndarray], config: dict) -> None:
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d
            data = np.asarray(params[name], dtype="<f8")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", data.ndim))
            for d in data.shape:
                fh.write(struct.pack("<I", d))
            fh.write(data.tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(raw):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = raw[off:off + n]
        off += n
        return chunk

    if take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", take(4))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (cfg_len,) = struct.unpack("<I", take(4))
    config = json.loads(take(cfg_len).decode("utf-8"))
    (n_params,) = struct.unpack("<I", take(4))
    params: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(count * 8), dtype="<f8").reshape(shape)
        params[name] = data.astype(np.float64).copy()
    if off != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after last record")
    return config, params
