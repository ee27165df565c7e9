"""Field serialization.

Binary layout (little endian)::

    b"MFGF"                 magic
    uint32                  format version (1)
    uint32                  length L of the placement tag
    L bytes                 placement tag, utf-8 ("node", "interval", "interval-vector", ...)
    uint32                  number of axes k
    k x uint64              axis lengths
    float64 payload         C order (last spatial axis fastest)

CSV layout: one row per entry, index columns ``i0 .. i{k-1}`` followed by
``value`` written with ``repr`` so that floats round-trip exactly.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MFGF"
VERSION = 1


def write_field(path, data: np.ndarray, placement: str) -> None:
    arr = np.ascontiguousarray(data, dtype="<f8")
    tag = placement.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tag)))
        fh.write(tag)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_field(path):
    """Return ``(array, placement)``."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a field file")
        version, taglen = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported field format version {version}")
        placement = fh.read(taglen).decode("utf-8")
        (ndim,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
        payload = fh.read()
    arr = np.frombuffer(payload, dtype="<f8")
    if arr.size != int(np.prod(shape)):
        raise ValueError(f"{path}: payload size does not match header")
    return arr.reshape(shape).astype(float), placement


def write_field_csv(path, data: np.ndarray) -> None:
    arr = np.asarray(data, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"i{j}" for j in range(arr.ndim)] + ["value"])
        for idx in np.ndindex(*arr.shape):
            writer.writerow(list(idx) + [repr(float(arr[idx]))])


def read_field_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    k = len(header) - 1
    idx = np.array([[int(c) for c in row[:k]] for row in body], dtype=int)
    vals = np.array([float(row[k]) for row in body])
    shape = tuple(idx.max(axis=0) + 1) if len(body) else (0,) * k
    out = np.empty(shape)
    out[tuple(idx.T)] = vals
    return out


def file_sha256(path) -> str:
    import hashlib

    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
