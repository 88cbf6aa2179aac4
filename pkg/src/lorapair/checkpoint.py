"""Versioned binary container for named float64 arrays.

Layout::

    b"LORAPAIR"             8-byte magic
    uint32 LE               format version
    uint64 LE               header length in bytes
    header                  UTF-8 JSON: {"meta": {...}, "arrays": [{"name", "shape"}, ...]}
    payload                 each array's float64 little-endian values, in header order

The JSON is written with sorted keys, so saving the same arrays and metadata
twice gives identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .encoder import EncoderConfig, PairEncoder
from .errors import CheckpointError
from .lora import LoraAdapter

MAGIC = b"LORAPAIR"
VERSION = 1
_LE = np.dtype("<f8")


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    entries, chunks = [], []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=_LE)
        entries.append({"name": name, "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
    header = json.dumps({"meta": meta or {}, "arrays": entries}, sort_keys=True).encode()
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQ", VERSION, len(header)))
            fh.write(header)
            for c in chunks:
                fh.write(c)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def load_arrays(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a lorapair checkpoint")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 8 + 12
    header = json.loads(raw[off : off + hlen].decode())
    off += hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        if off + 8 * n > len(raw):
            raise CheckpointError(f"{path} is truncated")
        arrays[entry["name"]] = np.frombuffer(raw, dtype=_LE, count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
    return arrays, header["meta"]


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_encoder(model: PairEncoder, path, meta=None) -> None:
    info = {"kind": "encoder", "config": model.config.to_dict()}
    info.update(meta or {})
    save_arrays(path, {k: v.data for k, v in model.params.items()}, info)


def load_encoder(path) -> PairEncoder:
    """Load an encoder checkpoint; every parameter comes back frozen."""
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "encoder":
        raise CheckpointError(f"{path} does not hold an encoder")
    cfg = EncoderConfig(**meta["config"])
    return PairEncoder(cfg, {k: Tensor(v, name=k) for k, v in arrays.items()})


def save_adapters(model: PairEncoder, path, dense_names=(), meta=None) -> None:
    """Store A, B, rank and scale of each adapter, plus any directly-tuned dense layers."""
    arrays, layers = {}, []
    for name, a in model.adapters.items():
        arrays[f"{name}.A"], arrays[f"{name}.B"] = a.A.data, a.B.data
        layers.append({"target": name, "rank": a.rank, "scale": a.scale})
    for name in dense_names:
        arrays[f"{name}.dense"] = model.params[name].data
    info = {"kind": "adapters", "adapters": layers, "dense": list(dense_names)}
    info.update(meta or {})
    save_arrays(path, arrays, info)


def load_adapters(model: PairEncoder, path) -> PairEncoder:
    """Attach the adapters (and dense overrides) stored at ``path`` to ``model``."""
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "adapters":
        raise CheckpointError(f"{path} does not hold adapters")
    for layer in meta["adapters"]:
        name = layer["target"]
        if name not in model.params:
            raise CheckpointError(f"{path}: adapter target {name!r} missing from the encoder")
        w = model.params[name]
        model.adapters[name] = LoraAdapter(
            W0=Tensor(w.data.copy(), name=name),
            A=Tensor(arrays[f"{name}.A"], requires_grad=True, name=f"{name}.A"),
            B=Tensor(arrays[f"{name}.B"], requires_grad=True, name=f"{name}.B"),
            rank=int(layer["rank"]),
            scale=float(layer["scale"]),
            target=name,
        )
    for name in meta.get("dense", []):
        model.params[name] = Tensor(arrays[f"{name}.dense"], name=name)
    return model
