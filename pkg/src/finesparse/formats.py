"""On-disk formats: DFST tensors, DFSM block masks, CSV reports.

All writes go through :func:`atomic_write` (temp file in the target
directory, then ``os.replace``) so an interrupted run never leaves a
truncated file behind.
"""

from __future__ import annotations

import csv
import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .attention import BlockMask

TENSOR_MAGIC = b"DFST"
MASK_MAGIC = b"DFSM"
VERSION = 1


class FormatError(ValueError):
    """Malformed DFST/DFSM payload."""


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensor(x) -> bytes:
    x = np.asarray(x, dtype="<f4")
    if x.ndim != 2:
        raise FormatError(f"DFST stores rank-2 tensors, got rank {x.ndim}")
    header = TENSOR_MAGIC + struct.pack("<II", VERSION, x.ndim) + struct.pack(
        f"<{x.ndim}I", *x.shape
    )
    return header + np.ascontiguousarray(x).tobytes()


def decode_tensor(data: bytes) -> np.ndarray:
    if len(data) < 12 or data[:4] != TENSOR_MAGIC:
        raise FormatError("not a DFST tensor")
    version, rank = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported DFST version {version}")
    if rank != 2:
        raise FormatError(f"expected rank 2, got {rank}")
    if len(data) < 12 + 4 * rank:
        raise FormatError("truncated DFST header")
    shape = struct.unpack_from(f"<{rank}I", data, 12)
    offset = 12 + 4 * rank
    expected = offset + 4 * int(np.prod(shape))
    if len(data) != expected:
        raise FormatError(f"DFST payload is {len(data)} bytes, expected {expected}")
    return np.frombuffer(data, dtype="<f4", offset=offset).reshape(shape).astype(np.float32)


def write_tensor(path, x) -> None:
    atomic_write(path, encode_tensor(x))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def encode_mask(mask: BlockMask) -> bytes:
    m = mask.block_count
    packed = np.packbits(mask.bits.ravel(), bitorder="big")
    return MASK_MAGIC + struct.pack("<III", VERSION, m, mask.block_size) + packed.tobytes()


def decode_mask(data: bytes) -> BlockMask:
    if len(data) < 16 or data[:4] != MASK_MAGIC:
        raise FormatError("not a DFSM mask")
    version, m, block_size = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported DFSM version {version}")
    nbytes = -(-m * m // 8)
    if len(data) != 16 + nbytes:
        raise FormatError(f"DFSM payload is {len(data) - 16} bytes, expected {nbytes}")
    raw = np.frombuffer(data, dtype=np.uint8, offset=16)
    flat = np.unpackbits(raw, bitorder="big")
    if flat[m * m :].any():
        raise FormatError("DFSM padding bits must be zero")
    bits = flat[: m * m].reshape(m, m).astype(bool)
    return BlockMask(bits, block_size)


def write_mask(path, mask: BlockMask) -> None:
    atomic_write(path, encode_mask(mask))


def read_mask(path) -> BlockMask:
    return decode_mask(Path(path).read_bytes())


def _fmt(value) -> str:
    if isinstance(value, np.generic):
        value = value.item()
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue().encode("utf-8")


def write_csv(path, header, rows) -> None:
    atomic_write(path, csv_bytes(header, rows))


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
