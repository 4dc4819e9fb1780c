"""Binary checkpoint format.

Layout (little-endian): magic "TTSE", u32 version, u32 JSON length, the
model config as JSON, u64 parameter count, then per parameter:
u32 name length, name bytes, u32 ndim, u32 extents..., f64 data.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import DataError
from .config import ModelConfig
from .network import TTSModel

MAGIC = b"TTSE"
VERSION = 1


def save_checkpoint(path, model: TTSModel):
    cfg_json = json.dumps(model.cfg.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(cfg_json)))
        f.write(cfg_json)
        f.write(struct.pack("<Q", len(model.params)))
        for name in sorted(model.params):
            data = model.params[name].data
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.astype("<f8").tobytes())


def load_checkpoint(path) -> TTSModel:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        version, cfg_len = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        cfg = ModelConfig.from_dict(json.loads(f.read(cfg_len).decode("utf-8")))
        (count,) = struct.unpack("<Q", f.read(8))
        params = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            buf = f.read(8 * n)
            if len(buf) != 8 * n:
                raise DataError(f"{path}: truncated parameter {name!r}")
            params[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

    vocab_size = params["embed"].shape[0]
    n_speakers = params["proj"].shape[1] if "proj" in params else 0
    model = TTSModel(cfg, vocab_size, n_speakers, seed=0)
    if set(model.params) != set(params):
        raise DataError(f"{path}: parameter set does not match architecture")
    for name, value in params.items():
        if model.params[name].data.shape != value.shape:
            raise DataError(f"{path}: shape mismatch for parameter {name!r}")
        model.params[name].data = value
    return model
