"""Per-sentence embedding matrices: binary store format and synthetic data.

The on-disk KPEB format is: magic ``KPEB``, u32 version (= 1), u32 metadata
length followed by that many bytes of JSON ``{d1, model_tag, record_count}``,
then per record a u16 id length, the UTF-8 sentence id, u32 row count n, and
n*d1 little-endian float32 values in row-major order.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from .treebank import Sentence

MAGIC = b"KPEB"
VERSION = 1


class StoreError(ValueError):
    """Raised when a byte stream is not a valid KPEB store."""


@dataclass(frozen=True)
class SentenceEmbedding:
    sentence_id: str
    matrix: np.ndarray  # n x d1, float32, rows in token order

    def __post_init__(self) -> None:
        m = self.matrix
        if m.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-d, got shape {m.shape}")
        if m.dtype != np.float32:
            object.__setattr__(self, "matrix", m.astype(np.float32))
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError(f"non-finite entries in embedding {self.sentence_id!r}")


@dataclass
class EmbeddingStore:
    d1: int
    model_tag: str
    records: list[SentenceEmbedding]

    def validate(self) -> None:
        ids = set()
        for rec in self.records:
            if rec.matrix.shape[1] != self.d1:
                raise ValueError(
                    f"record {rec.sentence_id!r} has width {rec.matrix.shape[1]}, "
                    f"store d1 is {self.d1}"
                )
            if rec.sentence_id in ids:
                raise ValueError(f"duplicate sentence id {rec.sentence_id!r}")
            ids.add(rec.sentence_id)

    def by_id(self) -> dict[str, SentenceEmbedding]:
        return {rec.sentence_id: rec for rec in self.records}


def write_store(store: EmbeddingStore, sink: BinaryIO) -> int:
    """Serialize a store; identical stores produce identical bytes."""
    store.validate()
    meta = json.dumps(
        {
            "d1": store.d1,
            "model_tag": store.model_tag,
            "record_count": len(store.records),
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    written = 0
    written += sink.write(MAGIC)
    written += sink.write(struct.pack("<I", VERSION))
    written += sink.write(struct.pack("<I", len(meta)))
    written += sink.write(meta)
    for rec in store.records:
        sid = rec.sentence_id.encode("utf-8")
        if len(sid) > 0xFFFF:
            raise ValueError(f"sentence id too long ({len(sid)} bytes)")
        written += sink.write(struct.pack("<H", len(sid)))
        written += sink.write(sid)
        written += sink.write(struct.pack("<I", rec.matrix.shape[0]))
        written += sink.write(
            np.ascontiguousarray(rec.matrix, dtype="<f4").tobytes()
        )
    return written


def read_store(source: BinaryIO) -> EmbeddingStore:
    """Parse a KPEB byte stream; inverse of write_store."""
    offset = 0

    def take(count: int, what: str) -> bytes:
        nonlocal offset
        buf = source.read(count)
        if len(buf) != count:
            raise StoreError(
                f"truncated store: expected {count} bytes for {what} at "
                f"offset {offset}, got {len(buf)}"
            )
        offset += count
        return buf

    if take(4, "magic") != MAGIC:
        raise StoreError("bad magic at offset 0: not a KPEB store")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise StoreError(f"unsupported version {version} at offset 4")
    (meta_len,) = struct.unpack("<I", take(4, "metadata length"))
    try:
        meta = json.loads(take(meta_len, "metadata").decode("utf-8"))
        d1 = int(meta["d1"])
        model_tag = str(meta["model_tag"])
        record_count = int(meta["record_count"])
    except (ValueError, KeyError) as exc:
        raise StoreError(f"bad metadata block at offset 12: {exc}") from None
    records = []
    for _ in range(record_count):
        (id_len,) = struct.unpack("<H", take(2, "id length"))
        sid = take(id_len, "sentence id").decode("utf-8")
        (n,) = struct.unpack("<I", take(4, "row count"))
        payload_offset = offset
        payload = take(n * d1 * 4, f"float payload of {sid!r}")
        matrix = np.frombuffer(payload, dtype="<f4").reshape(n, d1).copy()
        if not np.all(np.isfinite(matrix)):
            raise StoreError(
                f"non-finite value in record {sid!r} at offset {payload_offset}"
            )
        records.append(SentenceEmbedding(sentence_id=sid, matrix=matrix))
    store = EmbeddingStore(d1=d1, model_tag=model_tag, records=records)
    store.validate()
    return store


def align(
    store: EmbeddingStore, sentences: list[Sentence]
) -> list[tuple[Sentence, SentenceEmbedding]]:
    """Pair sentences with their embeddings by id, in treebank order."""
    by_id = store.by_id()
    pairs = []
    for s in sentences:
        rec = by_id.get(s.id)
        if rec is None:
            continue
        if rec.matrix.shape[0] != len(s):
            raise ValueError(
                f"sentence {s.id!r}: {len(s)} tokens but embedding has "
                f"{rec.matrix.shape[0]} rows"
            )
        pairs.append((s, rec))
    return pairs


def _rotation(d1: int, seed: int) -> np.ndarray:
    """Deterministic random orthogonal d1 x d1 matrix."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((d1, d1)))
    return q * np.sign(np.diag(r))


def synth_tree_embeddings(
    s: Sentence, d1: int, noise_sigma: float, seed: int
) -> SentenceEmbedding:
    """Embeddings whose squared Euclidean distances equal tree distances.

    Each tree edge gets its own orthonormal direction and each word vector
    sums the directions on its path from the root, so with zero noise
    ``||h_i - h_j||^2`` is the path length between i and j. A rotation
    drawn from ``seed`` alone (shared by every sentence generated with
    that seed) hides the coordinate structure; Gaussian noise is drawn per
    sentence from ``(seed, sentence id)``.
    """
    n = len(s)
    if d1 < n - 1:
        raise ValueError(f"d1 must be >= n-1 ({n - 1}), got {d1}")
    edge_index = {}
    for t in s.tokens:
        if t.head >= 1:
            edge_index[t.index] = len(edge_index)
    children: dict[int, list[int]] = {}
    root = None
    for t in s.tokens:
        if t.head == 0:
            root = t.index
        else:
            children.setdefault(t.head, []).append(t.index)
    raw = np.zeros((n, d1))
    stack = [root]
    while stack:
        node = stack.pop()
        for child in children.get(node, []):
            raw[child - 1] = raw[node - 1]
            raw[child - 1, edge_index[child]] += 1.0
            stack.append(child)
    rotated = raw @ _rotation(d1, seed).T
    if noise_sigma > 0:
        noise_rng = np.random.default_rng(
            np.random.SeedSequence([seed, zlib.crc32(s.id.encode("utf-8"))])
        )
        rotated = rotated + noise_sigma * noise_rng.standard_normal((n, d1))
    return SentenceEmbedding(
        sentence_id=s.id, matrix=rotated.astype(np.float32)
    )
