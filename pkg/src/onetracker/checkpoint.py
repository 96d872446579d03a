"""Binary checkpoint format.

Layout (all integers unsigned 32-bit little-endian unless noted)::

    b"OTKR" | version | entry count
    per entry, sorted by name:
        name length | UTF-8 name | dtype tag (1 byte: 0 = f32, 1 = f64) | rank | dims...
        little-endian payload
    CRC-32 of every preceding byte

Metadata rides along as ordinary f32 entries under ``__meta__.`` names
holding raw bytes (config text, foundation hash).
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"OTKR"
VERSION = 1
META_PREFIX = "__meta__."
_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def bytes_entry(raw: bytes) -> np.ndarray:
    return np.frombuffer(raw, dtype=np.uint8).astype(np.float32)


def entry_bytes(arr: np.ndarray) -> bytes:
    return np.asarray(arr).astype(np.uint8).tobytes()


def _header(name: str, arr: np.ndarray) -> bytes:
    dt = arr.dtype.newbyteorder("<")
    if dt not in _TAGS:
        raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
    raw = name.encode("utf-8")
    return (struct.pack("<I", len(raw)) + raw + struct.pack("<B", _TAGS[dt])
            + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))


def checkpoint_nbytes(entries: dict[str, np.ndarray]) -> int:
    """Exact file size ``save_checkpoint`` would produce."""
    total = len(MAGIC) + 8 + 4
    for name, arr in entries.items():
        total += 4 + len(name.encode("utf-8")) + 1 + 4 + 4 * np.ndim(arr) + np.asarray(arr).nbytes
    return total


def save_checkpoint(path: str | Path, entries: dict[str, np.ndarray], dtype=None) -> Path:
    """Write ``entries`` (optionally cast to ``dtype``), streaming the CRC."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    crc = 0
    with open(path, "wb") as fh:
        def emit(chunk: bytes):
            nonlocal crc
            crc = zlib.crc32(chunk, crc)
            fh.write(chunk)

        emit(MAGIC + struct.pack("<II", VERSION, len(entries)))
        for name in sorted(entries):
            arr = np.asarray(entries[name])
            if dtype is not None and not name.startswith(META_PREFIX):
                arr = arr.astype(dtype)
            arr = np.asarray(arr, dtype=arr.dtype.newbyteorder("<"), order="C")  # keeps rank 0
            emit(_header(name, arr))
            emit(arr.tobytes())
        fh.write(struct.pack("<I", crc & 0xFFFFFFFF))
    return path


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an OTKR checkpoint")
    body, stored = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != stored:
        raise CheckpointError(f"{path}: CRC mismatch (file corrupted)")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + n].decode("utf-8")
            pos += n
            tag, rank = struct.unpack_from("<BI", body, pos)
            pos += 5
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            dt = _DTYPES[tag]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(body):
                raise CheckpointError(f"{path}: truncated payload for {name}")
            out[name] = np.frombuffer(body, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(dims).copy()
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed entry table ({exc})") from None
    if pos != len(body):
        raise CheckpointError(f"{path}: {len(body) - pos} trailing bytes")
    return out


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
