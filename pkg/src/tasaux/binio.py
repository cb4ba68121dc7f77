"""Header-prefixed binary arrays: one JSON line, then raw little-endian reals."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class BinaryFormatError(ValueError):
    pass


def write_blob(path: str | Path, header: dict, payload: np.ndarray, dtype: str) -> None:
    header = dict(header, dtype=dtype)
    raw = np.ascontiguousarray(payload, dtype=np.dtype(dtype)).tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(raw)


def read_blob(path: str | Path) -> tuple[dict, np.ndarray]:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise BinaryFormatError(f"{path}: missing JSON header line")
    try:
        header = json.loads(data[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BinaryFormatError(f"{path}: bad header: {exc}") from None
    dtype = np.dtype(header.get("dtype", "<f8"))
    body = data[nl + 1:]
    if len(body) % dtype.itemsize:
        raise BinaryFormatError(f"{path}: payload of {len(body)} bytes is not a multiple of {dtype.itemsize}")
    return header, np.frombuffer(body, dtype=dtype).astype(np.float64)
