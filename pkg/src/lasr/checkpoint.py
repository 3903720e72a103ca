"""Versioned binary container for named float64 arrays plus JSON metadata.

Layout: 8-byte magic, little-endian u64 header length, UTF-8 JSON header,
then the raw arrays back to back.  Output depends only on content, so a
save -> load -> save cycle is byte-identical.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"LASRCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps(arrays: dict, config: dict, kind: str, meta: dict | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = a.tobytes()
        entries.append([name, list(a.shape), offset, len(raw)])
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "meta": meta or {},
        "arrays": entries,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hb)) + hb + payload


def loads(data: bytes):
    """Returns ``(arrays, config, kind, meta)``."""
    if len(data) < 16 or data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}"
                              f" (expected {FORMAT_VERSION})")
    payload = data[16 + hlen:]
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CheckpointError("checkpoint payload checksum mismatch (corrupt or truncated)")
    arrays = {}
    for name, shape, off, n in header["arrays"]:
        arrays[name] = np.frombuffer(payload[off:off + n], dtype="<f8").reshape(shape).astype(np.float64)
    return arrays, header["config"], header["kind"], header["meta"]


def save(path, arrays: dict, config: dict, kind: str, meta: dict | None = None):
    atomic_write_bytes(path, dumps(arrays, config, kind, meta))


def load(path):
    return loads(Path(path).read_bytes())


def check_config(stored: dict, expected: dict):
    for key, val in expected.items():
        if key in stored and stored[key] != val:
            raise CheckpointError(f"config mismatch on {key!r}: checkpoint has {stored[key]!r}, "
                                  f"expected {val!r}")
