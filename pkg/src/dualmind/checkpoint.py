"""Versioned binary checkpoint container.

Layout (little-endian)::

    magic          8 bytes  b"DMWMCKPT"
    version        u32
    manifest_len   u64
    manifest       UTF-8 JSON, manifest_len bytes
    payload        raw blocks; each manifest entry records (offset, nbytes)
                   relative to the start of the payload

The manifest carries the run config, counters, metrics rows, RNG states,
optimizer hyperparameters and a table of tensor blocks
(name, dtype, shape, offset, nbytes).  Tensor blocks hold C-order
little-endian data, so a save/load cycle is bit-exact.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import BadMagicError, FormatError, TruncatedFileError, VersionError

MAGIC = b"DMWMCKPT"
FORMAT_VERSION = 1

_DTYPES = {
    torch.float32: "<f4", torch.float64: "<f8", torch.int64: "<i8",
    torch.int32: "<i4", torch.uint8: "|u1", torch.bool: "|b1",
}
_TORCH = {v: k for k, v in _DTYPES.items()}


class BlockWriter:
    def __init__(self):
        self.entries = []
        self.chunks = []
        self.size = 0

    def add_bytes(self, name: str, data: bytes) -> None:
        self.entries.append({"name": name, "kind": "bytes", "offset": self.size, "nbytes": len(data)})
        self.chunks.append(data)
        self.size += len(data)

    def add_tensor(self, name: str, t: torch.Tensor) -> None:
        t = t.detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise FormatError(f"cannot store tensor {name} of dtype {t.dtype}")
        data = t.numpy().astype(_DTYPES[t.dtype], copy=False).tobytes()
        self.entries.append({"name": name, "kind": "tensor", "dtype": _DTYPES[t.dtype],
                             "shape": list(t.shape), "offset": self.size, "nbytes": len(data)})
        self.chunks.append(data)
        self.size += len(data)


def encode(manifest: dict, blocks: BlockWriter) -> bytes:
    manifest = dict(manifest, blocks=blocks.entries)
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return b"".join([MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(head)), head] + blocks.chunks)


def decode(data: bytes):
    """Returns (manifest, {name: tensor or bytes})."""
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise BadMagicError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    if len(data) < pos + 12:
        raise TruncatedFileError("checkpoint truncated inside the header")
    version, head_len = struct.unpack_from("<IQ", data, pos)
    if version != FORMAT_VERSION:
        raise VersionError(version, FORMAT_VERSION, "checkpoint")
    pos += 12
    if len(data) < pos + head_len:
        raise TruncatedFileError(
            f"checkpoint truncated: manifest needs {head_len} bytes, {len(data) - pos} remain")
    try:
        manifest = json.loads(data[pos:pos + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint manifest is not valid JSON: {exc}") from None
    payload = memoryview(data)[pos + head_len:]
    out = {}
    end = 0
    for e in manifest.get("blocks", []):
        lo, n = e["offset"], e["nbytes"]
        if lo + n > len(payload):
            raise TruncatedFileError(
                f"checkpoint truncated: block {e['name']!r} needs bytes {lo}..{lo + n}, "
                f"payload has {len(payload)}")
        raw = bytes(payload[lo:lo + n])
        end = max(end, lo + n)
        if e["kind"] == "bytes":
            out[e["name"]] = raw
        else:
            arr = np.frombuffer(raw, dtype=e["dtype"]).reshape(e["shape"])
            out[e["name"]] = torch.from_numpy(arr.copy()).to(_TORCH[e["dtype"]])
    if end != len(payload):
        raise TruncatedFileError(f"{len(payload) - end} unexpected trailing bytes in checkpoint")
    return manifest, out


def write_atomic(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return path


def read(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    return decode(data)


# -- optimizer state ------------------------------------------------------

def add_optimizer(blocks: BlockWriter, prefix: str, opt: torch.optim.Optimizer) -> dict:
    sd = opt.state_dict()
    keys = {}
    for idx, st in sd["state"].items():
        keys[str(idx)] = sorted(st)
        for k, v in st.items():
            blocks.add_tensor(f"{prefix}/{idx}/{k}", torch.as_tensor(v))
    return {"param_groups": sd["param_groups"], "state_keys": keys}


def load_optimizer(opt: torch.optim.Optimizer, meta: dict, prefix: str, tensors: dict) -> None:
    state = {}
    for idx, keys in meta["state_keys"].items():
        state[int(idx)] = {k: tensors[f"{prefix}/{idx}/{k}"] for k in keys}
    opt.load_state_dict({"state": state, "param_groups": meta["param_groups"]})
