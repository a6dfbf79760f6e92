"""Versioned binary checkpoint container.

Layout (all little-endian):
  magic "MMCP" | u32 version | 32-byte sha256 of the config text |
  u32 n_tensors | tensor table | u64 meta_len | meta JSON | payloads

Each table entry: u16 name_len, name, u8 dtype code, u8 ndim, u64 dims...,
u64 payload offset, u64 payload nbytes. Tensors are stored sorted by name
and payloads are raw float32, so save -> load -> save is byte-identical.
"""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"MMCP"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i8")}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}


def config_digest(config_text: str) -> bytes:
    return hashlib.sha256(config_text.encode("utf-8")).digest()


def save(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write a checkpoint. meta must be JSON-serializable and include the
    config text under meta["config"]."""
    names = sorted(tensors)
    metab = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")

    table = bytearray()
    entries = []
    for name in names:
        arr = np.ascontiguousarray(tensors[name])
        dt = np.dtype("<f4") if arr.dtype == np.float32 else np.dtype(arr.dtype.str.replace(">", "<"))
        if dt not in _DTYPE_CODES:
            raise FormatError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        entries.append((name.encode("utf-8"), _DTYPE_CODES[dt], arr.astype(dt, copy=False)))

    # Two passes: sizes first so payload offsets are known before writing.
    table_size = sum(2 + len(nb) + 1 + 1 + 8 * arr.ndim + 16 for nb, _, arr in entries)
    header_size = 4 + 4 + 32 + 4
    payload_start = header_size + table_size + 8 + len(metab)

    offset = payload_start
    for nb, code, arr in entries:
        table += struct.pack("<H", len(nb)) + nb
        table += struct.pack("<BB", code, arr.ndim)
        table += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        table += struct.pack("<QQ", offset, arr.nbytes)
        offset += arr.nbytes

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(config_digest(meta.get("config", "")))
        f.write(struct.pack("<I", len(entries)))
        f.write(table)
        f.write(struct.pack("<Q", len(metab)))
        f.write(metab)
        for _, _, arr in entries:
            f.write(arr.tobytes())


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; raises FormatError on corruption or version mismatch."""
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read checkpoint {path}: {e}") from e

    def take(fmt: str, at: int, what: str):
        size = struct.calcsize(fmt)
        if at + size > len(blob):
            raise FormatError(f"checkpoint truncated while reading {what}")
        return struct.unpack_from(fmt, blob, at), at + size

    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}; not a checkpoint file")
    (version,), pos = take("<I", 4, "version")
    if version != VERSION:
        raise FormatError(f"checkpoint version {version} unsupported (expected {VERSION})")
    digest, pos = blob[pos : pos + 32], pos + 32
    if len(digest) != 32:
        raise FormatError("checkpoint truncated while reading config digest")
    (n_tensors,), pos = take("<I", pos, "tensor count")

    entries = []
    for i in range(n_tensors):
        (name_len,), pos = take("<H", pos, f"tensor {i} name length")
        name = blob[pos : pos + name_len]
        if len(name) != name_len:
            raise FormatError(f"checkpoint truncated while reading tensor {i} name")
        pos += name_len
        (code, ndim), pos = take("<BB", pos, f"tensor {name!r} header")
        if code not in _DTYPES:
            raise FormatError(f"tensor {name.decode()!r} has unknown dtype code {code}")
        dims, pos = take(f"<{ndim}Q", pos, f"tensor {name!r} shape")
        (offset, nbytes), pos = take("<QQ", pos, f"tensor {name!r} location")
        entries.append((name.decode("utf-8"), code, dims, offset, nbytes))

    (meta_len,), pos = take("<Q", pos, "meta length")
    metab = blob[pos : pos + meta_len]
    if len(metab) != meta_len:
        raise FormatError("checkpoint truncated while reading meta block")
    try:
        meta = json.loads(metab.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"checkpoint meta block corrupt: {e}") from e

    if config_digest(meta.get("config", "")) != digest:
        raise FormatError("config digest does not match the stored config text")

    tensors = {}
    for name, code, dims, offset, nbytes in entries:
        payload = blob[offset : offset + nbytes]
        if len(payload) != nbytes:
            raise FormatError(f"checkpoint truncated in payload of tensor {name!r}")
        arr = np.frombuffer(payload, dtype=_DTYPES[code]).reshape(dims).copy()
        tensors[name] = arr
    return tensors, meta
