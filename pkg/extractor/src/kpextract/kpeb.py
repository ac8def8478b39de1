"""KPEB v1 writer.

The store format is the contract between the extractor and the probe:
magic ``KPEB``, u32 version (= 1), u32 metadata length followed by that
many bytes of compact JSON ``{d1, model_tag, record_count}`` with sorted
keys, then per record a u16 id length, the UTF-8 sentence id, u32 row
count n, and n*d1 little-endian float32 values in row-major order.
Identical inputs produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"KPEB"
VERSION = 1


def write_store(
    sink: BinaryIO,
    d1: int,
    model_tag: str,
    records: list[tuple[str, np.ndarray]],
) -> int:
    """Serialize (sentence id, n x d1 float32 matrix) records."""
    seen: set[str] = set()
    for sid, matrix in records:
        if sid in seen:
            raise ValueError(f"duplicate sentence id {sid!r}")
        seen.add(sid)
        if matrix.ndim != 2 or matrix.shape[1] != d1:
            raise ValueError(
                f"record {sid!r} has shape {matrix.shape}, want (n, {d1})"
            )
        if not np.all(np.isfinite(matrix)):
            raise ValueError(f"non-finite entries in record {sid!r}")
    meta = json.dumps(
        {"d1": d1, "model_tag": model_tag, "record_count": len(records)},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    written = 0
    written += sink.write(MAGIC)
    written += sink.write(struct.pack("<I", VERSION))
    written += sink.write(struct.pack("<I", len(meta)))
    written += sink.write(meta)
    for sid, matrix in records:
        encoded = sid.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"sentence id too long ({len(encoded)} bytes)")
        written += sink.write(struct.pack("<H", len(encoded)))
        written += sink.write(encoded)
        written += sink.write(struct.pack("<I", matrix.shape[0]))
        written += sink.write(
            np.ascontiguousarray(matrix, dtype="<f4").tobytes(order="C")
        )
    return written
