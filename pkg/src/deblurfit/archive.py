"""Named-tensor archive: the single binary format used for checkpoints,
kernel banks, and flow files.

Layout:
    bytes 0..3   magic b"NTA1"
    bytes 4..7   header length (little-endian uint32)
    header       UTF-8 JSON, padded with spaces so the payload is 64-aligned
    payload      raw little-endian float32 tensor data

The JSON header carries {"version": 1, "meta": {...}, "tensors": [...]},
where each tensor entry has name, shape, dtype ("f4") and its byte offset
relative to the payload start.  Every tensor starts on a 64-byte boundary.
Save followed by load is bit-exact for float32 data.
"""

from __future__ import annotations

import json
import os
from typing import Any

import numpy as np

from .errors import DataError

MAGIC = b"NTA1"
FORMAT_VERSION = 1
ALIGNMENT = 64
_PREFIX = len(MAGIC) + 4  # magic + header-length word


def _aligned(n: int) -> int:
    return (n + ALIGNMENT - 1) // ALIGNMENT * ALIGNMENT


def save_archive(
    path: str | os.PathLike,
    tensors: dict[str, np.ndarray],
    meta: dict[str, Any] | None = None,
) -> None:
    """Write tensors (cast to little-endian float32) plus a metadata dict."""
    table = []
    blobs = []
    offset = 0
    for name, array in tensors.items():
        # note: asarray(order="C") keeps 0-d shapes, ascontiguousarray would not
        arr = np.asarray(array, dtype="<f4", order="C")
        offset = _aligned(offset)
        table.append(
            {
                "name": str(name),
                "shape": [int(s) for s in arr.shape],
                "dtype": "f4",
                "offset": offset,
            }
        )
        blobs.append((offset, arr.tobytes()))
        offset += arr.nbytes
    header = {
        "version": FORMAT_VERSION,
        "meta": meta if meta is not None else {},
        "tensors": table,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    padded_len = _aligned(_PREFIX + len(header_bytes) + 1) - _PREFIX
    header_bytes += b" " * (padded_len - len(header_bytes) - 1) + b"\n"
    payload_size = _aligned(offset) if blobs else 0
    payload = bytearray(payload_size)
    for off, blob in blobs:
        payload[off : off + len(blob)] = blob
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header_bytes).to_bytes(4, "little"))
        fh.write(header_bytes)
        fh.write(payload)
    os.replace(tmp, path)


def _validate_table(table: list[dict], payload_size: int) -> None:
    seen = set()
    spans = []
    for entry in table:
        name = entry.get("name")
        shape = entry.get("shape")
        dtype = entry.get("dtype")
        offset = entry.get("offset")
        if not isinstance(name, str) or name in seen:
            raise DataError(f"archive tensor table has a missing or duplicate name: {name!r}")
        seen.add(name)
        if dtype != "f4":
            raise DataError(f"tensor {name!r} has unsupported dtype {dtype!r}")
        if (
            not isinstance(shape, list)
            or not all(isinstance(s, int) and s >= 0 for s in shape)
            or not isinstance(offset, int)
            or offset < 0
            or offset % ALIGNMENT
        ):
            raise DataError(f"tensor {name!r} has a malformed table entry")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if offset + nbytes > payload_size:
            raise DataError(f"tensor {name!r} extends past the end of the archive")
        spans.append((offset, offset + nbytes, name))
    spans.sort()
    for (_, end, name), (start, _, other) in zip(spans, spans[1:]):
        if end > start:
            raise DataError(f"tensors {name!r} and {other!r} overlap in the archive")


def load_archive(
    path: str | os.PathLike,
) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Read back tensors (float32) and the metadata dict.

    Raises DataError on anything malformed: wrong magic, unsupported
    version, truncation, or an inconsistent tensor table.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read archive {path}: {exc}") from exc
    if len(raw) < _PREFIX or raw[:4] != MAGIC:
        raise DataError(f"{path} is not a named-tensor archive (bad magic)")
    header_len = int.from_bytes(raw[4:8], "little")
    if len(raw) < _PREFIX + header_len:
        raise DataError(f"{path} is truncated inside its header")
    try:
        header = json.loads(raw[_PREFIX : _PREFIX + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path} has a corrupt header: {exc}") from exc
    if not isinstance(header, dict) or header.get("version") != FORMAT_VERSION:
        raise DataError(
            f"{path}: unsupported archive version {header.get('version')!r}"
        )
    table = header.get("tensors")
    meta = header.get("meta", {})
    if not isinstance(table, list) or not isinstance(meta, dict):
        raise DataError(f"{path} has a malformed header structure")
    payload = raw[_PREFIX + header_len :]
    _validate_table(table, len(payload))
    tensors: dict[str, np.ndarray] = {}
    for entry in table:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        data = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        tensors[entry["name"]] = data.reshape(shape).copy()
    return tensors, meta
