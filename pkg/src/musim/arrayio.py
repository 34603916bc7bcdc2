"""Binary container for named numpy arrays with a JSON header.

Used for model checkpoints and embedding index files. Layout:

    magic (6 bytes)  b"NARR1\\n"
    header length    uint64 little-endian
    header           UTF-8 JSON: {"meta": {...}, "arrays": [directory]}
    data             concatenated raw array bytes, little-endian

Each directory entry records name, dtype, shape and byte offset into the
data section. Writes go through a temp file and an atomic rename so a
crashed writer never leaves a half-written artifact behind.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"NARR1\n"


class ContainerError(ValueError):
    """Malformed or unreadable array container."""


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write bytes to path via a same-directory temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Serialize named arrays plus a JSON meta block to a single file.

    Arrays are stored little-endian in directory order; keys are sorted so
    identical inputs produce byte-identical files.
    """
    directory = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        directory.append(
            {
                "name": name,
                "dtype": le.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)

    header = json.dumps(
        {"meta": meta or {}, "arrays": directory},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<Q", len(header))
    out += header
    for raw in blobs:
        out += raw
    atomic_write_bytes(path, bytes(out))


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container back into (arrays, meta)."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ContainerError(f"{path}: bad magic, not an array container")
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
    hstart = len(MAGIC) + 8
    try:
        header = json.loads(raw[hstart : hstart + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: corrupt header") from exc
    data_start = hstart + hlen
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        start = data_start + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(raw):
            raise ContainerError(f"{path}: truncated data for array {entry['name']!r}")
        arr = np.frombuffer(raw[start:end], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return arrays, header.get("meta", {})
