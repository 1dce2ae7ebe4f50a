"""Binary container shared by dataset files and model checkpoints.

Layout::

    magic        4 bytes
    version      uint32 little-endian
    header_len   uint64 little-endian
    header       UTF-8 JSON; ``header["tensors"]`` lists name and shape
    tensors      row-major little-endian floats, in header order

Files are written to a temporary sibling and renamed into place, so a failed
write never leaves a partial file behind.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError

VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def pack(magic: bytes, header: dict, tensors: dict[str, np.ndarray], dtype: str) -> bytes:
    """Serialize ``tensors`` (in insertion order) behind a JSON header."""
    header = dict(header)
    header["dtype"] = dtype
    header["tensors"] = [{"name": k, "shape": list(np.shape(v))} for k, v in tensors.items()]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [_PREFIX.pack(magic, VERSION, len(blob)), blob]
    for arr in tensors.values():
        parts.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    return b"".join(parts)


def unpack(data: bytes, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < _PREFIX.size:
        raise FormatError(f"file too short for the {magic.decode()} prefix", len(data))
    got, version, header_len = _PREFIX.unpack_from(data, 0)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}, expected {VERSION}", 4)
    start = _PREFIX.size
    end = start + header_len
    if end > len(data):
        raise FormatError("header truncated", len(data))
    try:
        header = json.loads(data[start:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid JSON: {exc}", start) from None
    try:
        dtype = np.dtype(header["dtype"])
        manifest = header["tensors"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"header lacks tensor manifest: {exc}", start) from None
    tensors = {}
    offset = end
    for entry in manifest:
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if offset + nbytes > len(data):
            raise FormatError(f"tensor {entry['name']!r} truncated", len(data))
        arr = np.frombuffer(data, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset)
        tensors[entry["name"]] = arr.reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after last tensor", offset)
    return header, tensors


def write_file(path, magic: bytes, header: dict, tensors: dict[str, np.ndarray], dtype: str) -> None:
    atomic_write_bytes(path, pack(magic, header, tensors, dtype))


def read_file(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    return unpack(Path(path).read_bytes(), magic)
