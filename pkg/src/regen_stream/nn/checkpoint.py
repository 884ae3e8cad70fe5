"""Self-describing binary checkpoint format.

Layout (all integers little-endian)::

    b"DFG1"                      magic
    u32 version
    u32 header_len, header_len bytes of UTF-8 JSON (topology configs, metadata)
    u32 n_tensors
    n_tensors manifest entries:
        u16 name_len, name (UTF-8)
        u8  dtype code (1 = float64, 2 = float32)
        u8  ndim, ndim x u32 shape
        u64 byte offset (relative to the start of the payload block), u64 nbytes
    payload block (raw tensor bytes, C order)
    u32 CRC32 of every preceding byte
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CheckpointError

MAGIC = b"DFG1"
VERSION = 1
_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<f4")}
_CODES = {np.dtype("<f8"): 1, np.dtype("<f4"): 2}


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    header: dict = field(default_factory=dict)

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        """Tensors under ``prefix.`` with the prefix stripped."""
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}

    def has_component(self, prefix: str) -> bool:
        return any(k.startswith(prefix + ".") for k in self.tensors)


def to_bytes(ckpt: Checkpoint) -> bytes:
    header = json.dumps(ckpt.header, sort_keys=True).encode("utf-8")
    manifest = bytearray()
    payload = bytearray()
    names = sorted(ckpt.tensors)
    for name in names:
        arr = np.asarray(ckpt.tensors[name])
        if arr.dtype not in (np.float64, np.float32):
            arr = arr.astype(np.float64)
        arr = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        nb = name.encode("utf-8")
        manifest += struct.pack("<H", len(nb)) + nb
        manifest += struct.pack("<BB", _CODES[arr.dtype], arr.ndim)
        manifest += struct.pack(f"<{arr.ndim}I", *arr.shape)
        manifest += struct.pack("<QQ", len(payload), len(raw))
        payload += raw
    body = (MAGIC + struct.pack("<I", VERSION) + struct.pack("<I", len(header)) + header
            + struct.pack("<I", len(names)) + bytes(manifest) + bytes(payload))
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def from_bytes(blob: bytes, expected_shapes: dict[str, tuple] | None = None) -> Checkpoint:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError("not a DFG1 checkpoint (bad magic bytes)")
    body, crc = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint CRC mismatch (file is corrupt or truncated)")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 8
    try:
        (hlen,) = struct.unpack_from("<I", body, pos)
        pos += 4
        header = json.loads(body[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        entries = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            code, ndim = struct.unpack_from("<BB", body, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            off, nbytes = struct.unpack_from("<QQ", body, pos)
            pos += 16
            entries.append((name, code, shape, off, nbytes))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint manifest: {exc}") from None
    tensors = {}
    for name, code, shape, off, nbytes in entries:
        if code not in _DTYPES:
            raise CheckpointError(f"tensor {name}: unknown dtype code {code}")
        dt = _DTYPES[code]
        if nbytes != int(np.prod(shape, dtype=np.int64)) * dt.itemsize or pos + off + nbytes > len(body):
            raise CheckpointError(f"tensor {name}: payload size does not match its shape {shape}")
        arr = np.frombuffer(body, dtype=dt, count=nbytes // dt.itemsize, offset=pos + off)
        tensors[name] = arr.reshape(shape).astype(np.float64)
    if expected_shapes is not None:
        validate_shapes(tensors, expected_shapes)
    return Checkpoint(tensors=tensors, header=header)


def validate_shapes(tensors: dict[str, np.ndarray], expected: dict[str, tuple]) -> None:
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors: {missing[:5]}")
    for name, shape in expected.items():
        if tuple(tensors[name].shape) != tuple(shape):
            raise CheckpointError(
                f"tensor {name} has shape {tuple(tensors[name].shape)}, topology expects {tuple(shape)}"
            )


def save(path: str | Path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path: str | Path, expected_shapes: dict[str, tuple] | None = None) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return from_bytes(blob, expected_shapes)
