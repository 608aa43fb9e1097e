"""Binary checkpoint container and model reconstruction.

File layout (all integers little-endian):

    magic   8 bytes  b"RELBAG\\x00\\x01"
    meta    u32 byte length, then UTF-8 JSON (model/config/counters)
    count   u32 number of named tensors
    tensor  u16 name length, name UTF-8,
            u8 dtype code (1=float32, 2=float64, 3=int64),
            u8 ndim, u64 per dim,
            raw little-endian values in C order

Checkpoints are self-contained: the metadata carries the vocabulary, the
relation inventory and the model configuration, so a model can be rebuilt
from the file alone.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"RELBAG\x00\x01"
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2, np.dtype("int64"): 3}


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray], meta: dict):
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr)
            code = _CODES.get(arr.dtype)
            if code is None:
                raise ValueError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<BB", code, arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.astype(_DTYPES[code], copy=False).tobytes())


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a relbag checkpoint")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", fh.read(2))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
            dtype = _DTYPES[code]
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(n * dtype.itemsize), dtype=dtype).reshape(shape)
            tensors[name] = arr.astype(dtype.newbyteorder("="))
    return tensors, meta


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()[:16]


@dataclass
class Checkpoint:
    """Named parameters, optimizer moments and training counters."""

    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    step: int
    epoch: int
    best_val_auc: float | None
    cfg_hash: str
    meta: dict = field(default_factory=dict)  # model/vocab/inventory description

    def save(self, path: str | Path):
        tensors: dict[str, np.ndarray] = {}
        for name, arr in self.params.items():
            tensors[f"param/{name}"] = arr
        for name, arr in self.adam_m.items():
            tensors[f"adam_m/{name}"] = arr
        for name, arr in self.adam_v.items():
            tensors[f"adam_v/{name}"] = arr
        meta = dict(self.meta)
        meta["counters"] = {"step": self.step, "epoch": self.epoch,
                            "best_val_auc": self.best_val_auc}
        meta["config_hash"] = self.cfg_hash
        save_tensors(path, tensors, meta)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        tensors, meta = load_tensors(path)
        params, adam_m, adam_v = {}, {}, {}
        for name, arr in tensors.items():
            group, _, rest = name.partition("/")
            {"param": params, "adam_m": adam_m, "adam_v": adam_v}[group][rest] = arr
        counters = meta.pop("counters")
        cfg_hash = meta.pop("config_hash")
        return cls(params=params, adam_m=adam_m, adam_v=adam_v,
                   step=counters["step"], epoch=counters["epoch"],
                   best_val_auc=counters["best_val_auc"],
                   cfg_hash=cfg_hash, meta=meta)
