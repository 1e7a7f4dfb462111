"""Binary checkpoint container.

Layout: magic ``JKPT`` | version byte | u32-le header length | JSON header
| raw little-endian tensor payloads in header order. The header is dumped
with sorted keys and no float round-tripping tricks, so saving a freshly
loaded checkpoint reproduces the original file byte for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .corpus import Vocabulary
from .errors import CheckpointError

MAGIC = b"JKPT"
VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


def _wire_dtype(arr: np.ndarray) -> str:
    if arr.dtype == np.float64:
        return "<f8"
    return "<f4"


@dataclass
class CheckpointData:
    config: dict
    step: int
    vocab_tokens: list
    vocab_sha256: str
    tensors: dict  # name -> np.ndarray


def save_checkpoint(path: str, named_params, vocab: Vocabulary,
                    config: dict, step: int) -> None:
    """`named_params` is an iterable of (name, Tensor-or-array) pairs."""
    entries = []
    payloads = []
    seen = set()
    for name, p in named_params:
        if name in seen:
            raise CheckpointError(f"duplicate tensor name '{name}'")
        seen.add(name)
        arr = np.asarray(p.data if hasattr(p, "data") else p)
        wire = _wire_dtype(arr)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": wire})
        payloads.append(np.ascontiguousarray(arr.astype(_DTYPES[wire], copy=False)).tobytes())
    header = {
        "config": config,
        "step": int(step),
        "tensors": entries,
        "vocab_sha256": vocab.content_hash(),
        "vocab_tokens": vocab.content_tokens(),
    }
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False,
                      separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for raw in payloads:
            fh.write(raw)


def load_checkpoint(path: str) -> CheckpointData:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 9 or raw[:4] != MAGIC:
        raise CheckpointError(f"'{path}' is not a checkpoint file")
    version = raw[4]
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<I", raw, 5)
    start = 9
    if start + hlen > len(raw):
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except ValueError:
        raise CheckpointError("corrupt checkpoint header")
    offset = start + hlen
    tensors = {}
    for entry in header["tensors"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise CheckpointError(f"unknown tensor dtype '{entry['dtype']}'")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw):
            raise CheckpointError(f"truncated payload for tensor '{entry['name']}'")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape)
        tensors[entry["name"]] = arr.copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError("trailing bytes after tensor payloads")
    return CheckpointData(
        config=header["config"],
        step=int(header["step"]),
        vocab_tokens=list(header["vocab_tokens"]),
        vocab_sha256=header["vocab_sha256"],
        tensors=tensors,
    )


def restore_vocab(data: CheckpointData) -> Vocabulary:
    vocab = Vocabulary(data.vocab_tokens)
    if vocab.content_hash() != data.vocab_sha256:
        raise CheckpointError("vocabulary hash mismatch in checkpoint")
    return vocab


def verify_vocab(data: CheckpointData, vocab: Vocabulary) -> None:
    """Refuse to marry a checkpoint to a different vocabulary."""
    if vocab.content_hash() != data.vocab_sha256:
        raise CheckpointError(
            "checkpoint was trained with a different vocabulary "
            f"(stored {data.vocab_sha256[:12]}..., got {vocab.content_hash()[:12]}...)")


def load_into(named_params, data: CheckpointData) -> None:
    """Copy stored tensors into live parameters, strict on names and shapes."""
    params = {name: p for name, p in named_params}
    missing = sorted(set(params) - set(data.tensors))
    extra = sorted(set(data.tensors) - set(params))
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors: {missing}")
    if extra:
        raise CheckpointError(f"checkpoint has unexpected tensors: {extra}")
    for name, p in params.items():
        arr = data.tensors[name]
        if tuple(arr.shape) != tuple(p.data.shape):
            raise CheckpointError(
                f"shape mismatch for '{name}': checkpoint {arr.shape}, model {p.data.shape}")
        p.data[...] = arr.astype(p.data.dtype)


def load_subset(named_params, data: CheckpointData, prefix: str) -> None:
    """Copy only tensors under `prefix` (e.g. the shared encoder block)."""
    params = {name: p for name, p in named_params if name.startswith(prefix)}
    stored = {name: a for name, a in data.tensors.items() if name.startswith(prefix)}
    if not stored:
        raise CheckpointError(f"checkpoint has no tensors under '{prefix}'")
    if set(params) != set(stored):
        raise CheckpointError(
            f"tensor names under '{prefix}' do not line up with the checkpoint")
    for name, p in params.items():
        arr = stored[name]
        if tuple(arr.shape) != tuple(p.data.shape):
            raise CheckpointError(
                f"shape mismatch for '{name}': checkpoint {arr.shape}, model {p.data.shape}")
        p.data[...] = arr.astype(p.data.dtype)
