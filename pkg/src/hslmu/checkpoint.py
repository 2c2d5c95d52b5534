"""Checkpoint container: versioned header, raw tensor payload, integrity digest.

Layout (all little-endian):

    magic "HSLM" | u32 version | u32 header length | header JSON | payload | sha256

The header carries the tensor manifest (name, shape, dtype) and a small
metadata dict (schedule position, resolutions).  The payload is the tensors
back to back in manifest order, 32-bit floats unless the manifest says
otherwise.  The digest covers every preceding byte, so any single corrupted
byte is detected on load.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint"]

MAGIC = b"HSLM"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, corrupt, or mismatched checkpoint file."""


def save_checkpoint(
    path: str,
    tensors: dict[str, np.ndarray],
    meta: dict | None = None,
    dtype: str = "<f4",
) -> None:
    names = list(tensors)
    if len(set(names)) != len(names):
        raise CheckpointError("duplicate tensor names in manifest")
    manifest = []
    payload = bytearray()
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype=np.dtype(dtype))
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        payload += arr.tobytes()
    header = json.dumps({"manifest": manifest, "meta": meta or {}}, sort_keys=True).encode()
    body = MAGIC + struct.pack("<II", VERSION, len(header)) + header + bytes(payload)
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(body + digest)


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < 12 + 32 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic or truncated)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path} failed integrity check (corrupt or truncated)")
    version, header_len = struct.unpack("<II", body[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path} has format version {version}, expected {VERSION}")
    try:
        header = json.loads(body[12 : 12 + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path} header is unreadable: {exc}") from exc

    tensors = {}
    offset = 12 + header_len
    for entry in header["manifest"]:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dt.itemsize
        if offset + nbytes > len(body):
            raise CheckpointError(f"{path} payload truncated at tensor {entry['name']!r}")
        arr = np.frombuffer(body, dtype=dt, count=count, offset=offset).reshape(entry["shape"])
        tensors[entry["name"]] = arr.copy()
        offset += nbytes
    if offset != len(body):
        raise CheckpointError(f"{path} has {len(body) - offset} unexplained payload bytes")
    return tensors, header.get("meta", {})
