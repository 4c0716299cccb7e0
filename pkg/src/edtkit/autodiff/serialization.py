"""Single-file container for named float64 arrays.

Byte layout (all integers little-endian)::

    0       4 bytes   magic b"EDT1"
    4       uint32    header length N
    8       N bytes   UTF-8 JSON header
    8+N     0..7      zero padding to an 8-byte boundary
    ...     payload   raw little-endian float64 arrays, back to back

The header is ``{"kind": str, "meta": {...}, "tensors": [{"name", "shape",
"offset"}, ...]}`` where ``offset`` is in bytes from the payload start.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

__all__ = ["MAGIC", "FormatError", "save_arrays", "load_arrays"]

MAGIC = b"EDT1"
_F8 = np.dtype("<f8")


class FormatError(ValueError):
    """The file is not a valid EDT1 container."""


def save_arrays(
    path: str | Path,
    arrays: Mapping[str, np.ndarray],
    kind: str = "tensors",
    meta: Mapping | None = None,
    extra: Mapping[str, Mapping] | None = None,
) -> None:
    """Write ``arrays`` in insertion order.

    ``extra`` maps array names to additional manifest fields (used by the
    activation dump to store ``m`` and ``p``).
    """
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        a = np.array(arr, dtype=_F8, order="C")
        entry = {"name": name, "shape": list(a.shape), "offset": offset}
        if extra and name in extra:
            entry.update(extra[name])
        entries.append(entry)
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"kind": kind, "meta": dict(meta or {}), "tensors": entries}, sort_keys=True).encode()
    pad = (-(8 + len(header))) % 8
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(b"\0" * pad)
        for b in blobs:
            fh.write(b)


def load_arrays(path: str | Path, kind: str | None = None) -> tuple[dict[str, np.ndarray], dict, list[dict]]:
    """Return ``(arrays, meta, manifest_entries)``."""
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic, not an EDT1 file")
    (n,) = struct.unpack("<I", raw[4:8])
    try:
        header = json.loads(raw[8 : 8 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    if kind is not None and header.get("kind") != kind:
        raise FormatError(f"{path}: expected kind {kind!r}, found {header.get('kind')!r}")
    start = 8 + n + ((-(8 + n)) % 8)
    arrays = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        lo = start + e["offset"]
        hi = lo + 8 * count
        if hi > len(raw):
            raise FormatError(f"{path}: truncated payload for {e['name']}")
        arrays[e["name"]] = np.frombuffer(raw[lo:hi], dtype=_F8).astype(np.float64).reshape(e["shape"])
    return arrays, header.get("meta", {}), header["tensors"]
