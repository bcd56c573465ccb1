"""Compact binary column store.

Layout (all integers little-endian)::

    magic      6 bytes   b"TLCOL\\x00"
    version    uint16
    n_cols     uint32
    n_rows     uint64
    meta_len   uint32, then meta_len bytes of UTF-8 JSON (may be empty)
    n_cols x   (uint16 name length, UTF-8 name)
    n_cols x   n_rows float64 values, column-major

Every value is stored as an IEEE float64, so integer columns must fit in
53 bits. NaN encodes an absent value.
"""

from __future__ import annotations

import json
import os
import struct
from typing import Mapping

import numpy as np

from .errors import CorruptFile, VersionMismatch

MAGIC = b"TLCOL\x00"
VERSION = 1
_HEAD = struct.Struct("<6sHIQI")


def write_columns(path: str | os.PathLike, columns: Mapping[str, np.ndarray],
                  meta: Mapping | None = None) -> None:
    names = list(columns)
    arrays = [np.asarray(columns[k], dtype="<f8") for k in names]
    n_rows = len(arrays[0]) if arrays else 0
    for name, a in zip(names, arrays):
        if a.ndim != 1 or len(a) != n_rows:
            raise ValueError(f"column {name!r} has shape {a.shape}, expected ({n_rows},)")
    meta_bytes = json.dumps(dict(meta or {}), sort_keys=True).encode("utf-8") if meta else b""
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, len(names), n_rows, len(meta_bytes)))
        fh.write(meta_bytes)
        for name in names:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        for a in arrays:
            fh.write(a.tobytes())


def read_columns(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(columns, meta)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEAD.size or data[:6] != MAGIC:
        raise CorruptFile(f"{path}: not a column file")
    magic, version, n_cols, n_rows, meta_len = _HEAD.unpack_from(data, 0)
    if version != VERSION:
        raise VersionMismatch(f"{path}: column file version {version}, expected {VERSION}")
    pos = _HEAD.size
    try:
        meta = json.loads(data[pos:pos + meta_len].decode("utf-8")) if meta_len else {}
        pos += meta_len
        names = []
        for _ in range(n_cols):
            (ln,) = struct.unpack_from("<H", data, pos)
            pos += 2
            names.append(data[pos:pos + ln].decode("utf-8"))
            pos += ln
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: bad header ({exc})") from None
    need = pos + 8 * n_cols * n_rows
    if len(data) != need:
        raise CorruptFile(f"{path}: expected {need} bytes, found {len(data)}")
    cols = {}
    for name in names:
        cols[name] = np.frombuffer(data, dtype="<f8", count=n_rows, offset=pos).astype(np.float64)
        pos += 8 * n_rows
    return cols, meta
