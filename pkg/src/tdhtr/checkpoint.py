"""Single-file checkpoints.

Layout::

    b"TDHTRCKP"                     8-byte magic
    uint64 little-endian            manifest length in bytes
    UTF-8 JSON manifest             shapes, dtypes, offsets, hyperparameters
    raw little-endian arrays        concatenated, offsets relative to here
    32-byte SHA-256                 digest of every preceding byte

``read_manifest`` touches only the header, so hyperparameters can be
inspected without reading any array data.
"""

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ChecksumError, CheckpointError, ShapeError, VersionError

MAGIC = b"TDHTRCKP"
FORMAT_VERSION = 1
_DIGEST = 32


@dataclass
class Checkpoint:
    model_config: dict
    params: dict
    buffers: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)  # {"name", "hyper", "step", "slots": {slot: {param: array}}}
    rng_state: dict = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    extra: dict = field(default_factory=dict)


def _le(a):
    a = np.ascontiguousarray(a)
    return a.astype(a.dtype.newbyteorder("<"), copy=False)


def save_checkpoint(ckpt, path):
    arrays = []
    for name, a in ckpt.params.items():
        arrays.append(("param", name, a))
    for name, a in ckpt.buffers.items():
        arrays.append(("buffer", name, a))
    for slot, group in ckpt.optimizer.get("slots", {}).items():
        for name, a in group.items():
            arrays.append((f"opt:{slot}", name, a))
    entries = []
    offset = 0
    blobs = []
    for group, name, a in arrays:
        blob = _le(a).tobytes()
        entries.append({"group": group, "name": name, "dtype": np.dtype(a.dtype).str.lstrip("<>|="),
                        "shape": list(a.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    opt_meta = {k: v for k, v in ckpt.optimizer.items() if k != "slots"}
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": ckpt.model_config,
        "optimizer": opt_meta,
        "rng_state": ckpt.rng_state,
        "step": ckpt.step,
        "epoch": ckpt.epoch,
        "extra": ckpt.extra,
        "arrays": entries,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    h = hashlib.sha256()
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        for chunk in (MAGIC, struct.pack("<Q", len(head)), head, *blobs):
            f.write(chunk)
            h.update(chunk)
        f.write(h.digest())
    os.replace(tmp, path)


def read_manifest(path):
    """Parse only the header; array data is not read or verified."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        raw = f.read(8)
        if len(raw) != 8:
            raise ChecksumError(f"{path}: truncated header")
        (n,) = struct.unpack("<Q", raw)
        head = f.read(n)
    if len(head) != n:
        raise ChecksumError(f"{path}: truncated manifest")
    manifest = json.loads(head.decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported format version {manifest.get('format_version')}")
    return manifest


def load_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < len(MAGIC) + 8 + _DIGEST or data[:len(MAGIC)] != MAGIC:
        raise ChecksumError(f"{path}: truncated or not a checkpoint")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch (file corrupt or truncated)")
    (n,) = struct.unpack("<Q", body[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    manifest = json.loads(body[start:start + n].decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported format version {manifest.get('format_version')}")
    base = start + n
    params, buffers, slots = {}, {}, {}
    for e in manifest["arrays"]:
        dt = np.dtype(e["dtype"]).newbyteorder("<")
        count = int(np.prod(e["shape"], dtype=np.int64))
        if count * dt.itemsize != e["nbytes"] or base + e["offset"] + e["nbytes"] > len(body):
            raise ShapeError(f"{path}: array {e['name']} has inconsistent shape/size")
        a = np.frombuffer(body, dt, count, base + e["offset"]).reshape(e["shape"])
        a = a.astype(dt.newbyteorder("="))  # native, writable copy
        group = e["group"]
        if group == "param":
            params[e["name"]] = a
        elif group == "buffer":
            buffers[e["name"]] = a
        elif group.startswith("opt:"):
            slots.setdefault(group[4:], {})[e["name"]] = a
    optimizer = dict(manifest["optimizer"])
    if slots:
        optimizer["slots"] = slots
    return Checkpoint(model_config=manifest["model_config"], params=params, buffers=buffers,
                      optimizer=optimizer, rng_state=manifest["rng_state"],
                      step=manifest["step"], epoch=manifest["epoch"], extra=manifest.get("extra", {}))
