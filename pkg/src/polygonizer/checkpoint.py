"""Binary checkpoint format.

Layout (all integers little-endian):

    magic   4 bytes  b"PLGZ"
    version u32
    hdr_len u32, followed by hdr_len bytes of canonical JSON
            {"config": {...}, "metadata": {...}, "tensors": [
                {"name": ..., "dtype": ..., "shape": [...], "offset": ...}, ...]}
    data    concatenated raw tensor bytes, in table order

Round-trips are bit-exact: tensors are written with tobytes() and read back
with frombuffer() at the recorded dtype/shape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import AdamState, Tensor
from .network import ModelConfig

MAGIC = b"PLGZ"
FORMAT_VERSION = 1

_DTYPES = {"float32": np.float32, "float64": np.float64}


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint file."""


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, Tensor]
    adam: AdamState | None = None
    metadata: dict | None = None


def _tensor_table(arrays: dict[str, np.ndarray]):
    table = []
    offset = 0
    for name in sorted(arrays):
        a = arrays[name]
        if a.dtype.name not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {a.dtype.name} for tensor {name!r}")
        table.append({"name": name, "dtype": a.dtype.name, "shape": list(a.shape), "offset": offset})
        offset += a.nbytes
    return table


def save_checkpoint(path, config: ModelConfig, params: dict[str, Tensor], adam: AdamState | None = None, metadata: dict | None = None) -> None:
    arrays = {f"param/{k}": v.data for k, v in params.items()}
    if adam is not None:
        for k in params:
            arrays[f"adam.m/{k}"] = adam.m[k]
            arrays[f"adam.v/{k}"] = adam.v[k]
    meta = dict(metadata or {})
    if adam is not None:
        meta["adam_t"] = adam.t
        meta["adam_betas"] = [adam.beta1, adam.beta2]
        meta["adam_eps"] = adam.eps
    table = _tensor_table(arrays)
    header = json.dumps(
        {"config": config.to_dict(), "metadata": meta, "tensors": table},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint32(FORMAT_VERSION).tobytes())
        f.write(np.uint32(len(header)).tobytes())
        f.write(header)
        for entry in table:
            f.write(arrays[entry["name"]].tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version = int(np.frombuffer(blob[4:8], dtype=np.uint32)[0])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    hdr_len = int(np.frombuffer(blob[8:12], dtype=np.uint32)[0])
    try:
        header = json.loads(blob[12 : 12 + hdr_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from e
    data = blob[12 + hdr_len :]

    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        dtype = _DTYPES[entry["dtype"]]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=start).reshape(shape)
        arrays[entry["name"]] = arr.copy()

    config = ModelConfig.from_dict(header["config"])
    params = {k[len("param/"):]: Tensor(v) for k, v in arrays.items() if k.startswith("param/")}
    meta = header.get("metadata", {})
    adam = None
    if any(k.startswith("adam.m/") for k in arrays):
        adam = AdamState(
            m={k[len("adam.m/"):]: arrays[k] for k in arrays if k.startswith("adam.m/")},
            v={k[len("adam.v/"):]: arrays[k] for k in arrays if k.startswith("adam.v/")},
            t=int(meta.get("adam_t", 0)),
            beta1=float(meta.get("adam_betas", [0.9, 0.999])[0]),
            beta2=float(meta.get("adam_betas", [0.9, 0.999])[1]),
            eps=float(meta.get("adam_eps", 1e-8)),
        )
    return Checkpoint(config=config, params=params, adam=adam, metadata=meta)
