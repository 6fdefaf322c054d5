"""Single-file binary container for parameters and models.

Layout: 8-byte magic, uint32 format version, uint32 header length, UTF-8
JSON header (metadata plus an array directory of name/shape/offset), then
raw little-endian float64 array payloads.  The embedded JSON header plays
the descriptor role; shapes, modes, and seeds travel with the blob.
Anything unreadable -- bad magic, truncation, or a format version other
than the current one -- raises ``VersionError``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import VersionError

MAGIC = b"UPREBLOB"
FORMAT_VERSION = 1


def save_blob(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    directory = []
    offset = 0
    payload = bytearray()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = arr.tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "bytes": len(raw)})
        payload.extend(raw)
        offset += len(raw)
    header = dict(meta)
    header["arrays"] = directory
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(payload))


def load_blob(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise VersionError(f"{path}: not a recognized parameter blob")
    version, header_len = struct.unpack_from("<II", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})")
    start = len(MAGIC) + 8
    try:
        header = json.loads(data[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise VersionError(f"{path}: corrupt blob header ({exc})") from exc
    body = data[start + header_len :]
    arrays: dict[str, np.ndarray] = {}
    for entry in header.pop("arrays", []):
        raw = body[entry["offset"] : entry["offset"] + entry["bytes"]]
        if len(raw) != entry["bytes"]:
            raise VersionError(f"{path}: truncated blob (array {entry['name']!r})")
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).copy()
    return header, arrays
