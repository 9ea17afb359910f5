"""Named-tensor checkpoint container.

Layout (little-endian):

    magic "MINDCK1" | u8 version | u32 config_len | config JSON utf-8
    | u32 n_tensors | manifest | f32 blob | u32 crc32

Manifest entry: u16 name_len | name utf-8 | u8 ndim | u32 dims...
| u64 byte offset into the blob. Entries are sorted by name, offsets are
contiguous and non-overlapping, and the trailing CRC covers every
preceding byte, so save/load is bitwise idempotent.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

MAGIC = b"MINDCK1"
VERSION = 1


class CheckpointError(IOError):
    pass


def save_checkpoint(path: str, tensors: dict, config: dict = None) -> None:
    names = sorted(tensors)
    cfg_bytes = json.dumps(config or {}, sort_keys=True,
                           separators=(",", ":")).encode("utf-8")
    manifest = bytearray()
    blob = bytearray()
    for name in names:
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f4"))
        nb = name.encode("utf-8")
        manifest += struct.pack("<H", len(nb)) + nb
        manifest += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            manifest += struct.pack("<I", dim)
        manifest += struct.pack("<Q", len(blob))
        blob += arr.tobytes()
    out = bytearray()
    out += MAGIC
    out += struct.pack("<B", VERSION)
    out += struct.pack("<I", len(cfg_bytes))
    out += cfg_bytes
    out += struct.pack("<I", len(names))
    out += manifest
    out += blob
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    with open(path, "wb") as f:
        f.write(out)


def load_checkpoint(path: str):
    """Returns (tensors dict, config dict)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) + 13:
        raise CheckpointError("file truncated")
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic bytes")
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) != crc:
        raise CheckpointError("checksum mismatch")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<B", raw, off); off += 1
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    (cfg_len,) = struct.unpack_from("<I", raw, off); off += 4
    config = json.loads(raw[off:off + cfg_len].decode("utf-8")) if cfg_len else {}
    off += cfg_len
    (n,) = struct.unpack_from("<I", raw, off); off += 4
    entries = []
    for _ in range(n):
        (nlen,) = struct.unpack_from("<H", raw, off); off += 2
        name = raw[off:off + nlen].decode("utf-8"); off += nlen
        (ndim,) = struct.unpack_from("<B", raw, off); off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off) if ndim else ()
        off += 4 * ndim
        (blob_off,) = struct.unpack_from("<Q", raw, off); off += 8
        entries.append((name, shape, blob_off))
    blob = raw[off:-4]
    tensors = {}
    expect = 0
    for name, shape, blob_off in entries:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if blob_off != expect:
            raise CheckpointError(f"tensor '{name}' offset overlaps or gaps")
        end = blob_off + 4 * count
        if end > len(blob):
            raise CheckpointError(f"tensor '{name}' exceeds the blob")
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=count,
                                      offset=blob_off).reshape(shape).copy()
        expect = end
    if expect != len(blob):
        raise CheckpointError("trailing bytes after the last tensor")
    return tensors, config
