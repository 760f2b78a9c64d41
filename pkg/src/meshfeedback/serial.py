"""Binary container used by all on-disk artifacts.

Layout: 8-byte magic, uint32 little-endian header length, UTF-8 JSON header,
then the raw array payloads back to back in the order declared by the
header's "arrays" list. The header JSON is canonicalized (sorted keys, no
whitespace) so identical content always produces identical bytes.
"""

from __future__ import annotations

import json
import struct
from typing import Any

import numpy as np

from .errors import ConfigurationError

MAGIC = b"MESHFB01"

_DTYPES = {"f4": "<f4", "u1": "|u1"}


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def pack(meta: dict, arrays: list[tuple[str, np.ndarray]], kinds: dict[str, str] | None = None) -> bytes:
    """Serialize named arrays with a JSON header.

    Arrays are stored as little-endian float32 unless `kinds` maps the name
    to "u1" (8-bit unsigned, used for part-index grids).
    """
    kinds = kinds or {}
    decls = []
    payload = bytearray()
    for name, arr in arrays:
        kind = kinds.get(name, "f4")
        data = np.ascontiguousarray(arr, dtype=_DTYPES[kind])
        decls.append({"name": name, "shape": list(data.shape), "kind": kind})
        payload += data.tobytes()
    header = dict(meta)
    header["arrays"] = decls
    blob = canonical_json(header)
    return MAGIC + struct.pack("<I", len(blob)) + blob + bytes(payload)


def unpack_from(data: bytes, offset: int = 0) -> tuple[dict, dict[str, np.ndarray], int]:
    """Read one container starting at `offset`; returns the end offset too."""
    if data[offset : offset + 8] != MAGIC:
        raise ConfigurationError("not a meshfeedback container (bad magic)")
    (hlen,) = struct.unpack("<I", data[offset + 8 : offset + 12])
    header = json.loads(data[offset + 12 : offset + 12 + hlen].decode("utf-8"))
    arrays: dict[str, np.ndarray] = {}
    pos = offset + 12 + hlen
    for decl in header.pop("arrays"):
        dtype = np.dtype(_DTYPES[decl["kind"]])
        count = int(np.prod(decl["shape"])) if decl["shape"] else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(data[pos : pos + nbytes], dtype=dtype)
        arrays[decl["name"]] = arr.reshape(decl["shape"]).copy()
        pos += nbytes
    return header, arrays, pos


def unpack(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    header, arrays, end = unpack_from(data, 0)
    if end != len(data):
        raise ConfigurationError("container has trailing bytes")
    return header, arrays
