"""Persistent embedding catalog with exact Euclidean k-nearest-neighbor search.

A linear scan is exact and plenty fast at catalog scale (hundreds of
thousands of 128-d vectors scan in well under a second), so there is no
approximate structure. Ties are broken by insertion order.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .audio import CLIP_SECONDS, Waveform
from .errors import (DuplicateRecord, EmptyIndex, FingerprintMismatch,
                     IndexLoadError, QueryTooShort, ShapeMismatch)
from .nn import encode_forward
from .pipeline import ClipRef

INDEX_MAGIC = b"SSIX"
INDEX_VERSION = 1
QUERY_HOP_SECONDS = 5.0


@dataclass(frozen=True)
class EmbeddingRecord:
    clip: ClipRef
    embedding: np.ndarray
    genre: str = ""
    mood: str = ""


@dataclass(frozen=True)
class QueryResult:
    clip: ClipRef
    distance: float
    rank: int
    genre: str = ""
    mood: str = ""


@dataclass
class EmbeddingIndex:
    records: list
    fingerprint: bytes
    dimension: int
    matrix: np.ndarray = field(repr=False, default=None)

    def __len__(self):
        return len(self.records)


def fingerprint_file(path) -> bytes:
    """SHA-256 of a file's bytes; identifies the model that built an index."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.digest()


def build_index(records: list, fingerprint: bytes = b"\x00" * 32) -> EmbeddingIndex:
    if not records:
        raise EmptyIndex("cannot build an index from zero records")
    dim = len(np.asarray(records[0].embedding).reshape(-1))
    seen = set()
    rows = []
    kept = []
    for rec in records:
        emb = np.asarray(rec.embedding, dtype=np.float64).reshape(-1)
        if len(emb) != dim:
            raise ShapeMismatch("record dimension %d != %d" % (len(emb), dim))
        # offsets are f32 on disk; quantize now so round trips are bit-exact
        offset = float(np.float32(rec.clip.offset))
        key = (rec.clip.track_id, offset)
        if key in seen:
            raise DuplicateRecord("duplicate clip %s@%.3f" % key)
        seen.add(key)
        rows.append(emb)
        kept.append(EmbeddingRecord(
            clip=ClipRef(track_id=rec.clip.track_id, offset=offset),
            embedding=emb, genre=rec.genre, mood=rec.mood))
    return EmbeddingIndex(records=kept, fingerprint=fingerprint,
                          dimension=dim, matrix=np.asarray(rows))


def knn(index: EmbeddingIndex, query: np.ndarray, k: int,
        exclude_track: str | None = None) -> list:
    """Exact top-k by ascending Euclidean distance over the whole index."""
    if len(index) == 0:
        raise EmptyIndex("index is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if len(q) != index.dimension:
        raise ShapeMismatch("query dimension %d != index dimension %d"
                            % (len(q), index.dimension))

    mask = np.ones(len(index), dtype=bool)
    if exclude_track is not None:
        mask = np.array([r.clip.track_id != exclude_track for r in index.records])
    candidates = np.nonzero(mask)[0]
    if len(candidates) == 0:
        return []

    diffs = index.matrix[candidates] - q
    dists = np.sqrt(np.sum(diffs * diffs, axis=1))
    k_eff = min(k, len(candidates))
    # stable sort keeps insertion order among exact ties
    order = np.argsort(dists, kind="stable")[:k_eff]
    results = []
    for rank, pos in enumerate(order, start=1):
        rec = index.records[candidates[pos]]
        results.append(QueryResult(clip=rec.clip, distance=float(dists[pos]),
                                   rank=rank, genre=rec.genre, mood=rec.mood))
    return results


def query_windows(wave: Waveform) -> list:
    """10 s windows at a 5 s hop covering the query audio."""
    clip_len = int(CLIP_SECONDS * wave.sample_rate)
    hop = int(QUERY_HOP_SECONDS * wave.sample_rate)
    if wave.n_samples < clip_len:
        raise QueryTooShort(
            "query is %.2f s, need at least %.1f s" % (wave.duration, CLIP_SECONDS))
    starts = list(range(0, wave.n_samples - clip_len + 1, hop))
    return [(s / wave.sample_rate, wave.samples[s:s + clip_len]) for s in starts]


def search_by_track(index: EmbeddingIndex, model, wave: Waveform, k: int,
                    exclude_track: str | None = None) -> list:
    """Embed each query window, min-merge the per-window kNN hits, rank top-k."""
    windows = query_windows(wave)
    batch = np.stack([w for _, w in windows])
    embeddings, _ = encode_forward(model, batch, "inference")

    best = {}
    for emb in embeddings:
        for res in knn(index, emb, k, exclude_track=exclude_track):
            key = (res.clip.track_id, round(res.clip.offset, 6))
            if key not in best or res.distance < best[key].distance:
                best[key] = res
    merged = sorted(best.values(), key=lambda r: (r.distance, r.clip.track_id,
                                                  r.clip.offset))
    return [QueryResult(clip=r.clip, distance=r.distance, rank=i + 1,
                        genre=r.genre, mood=r.mood)
            for i, r in enumerate(merged[:k])]


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _write_str(f, s: str):
    raw = s.encode("utf-8")
    f.write(struct.pack("<I", len(raw)))
    f.write(raw)


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) < n:
        raise IndexLoadError("truncated index file")
    return data


def _read_str(f) -> str:
    (n,) = struct.unpack("<I", _read_exact(f, 4))
    if n > 1 << 20:
        raise IndexLoadError("implausible string length %d" % n)
    return _read_exact(f, n).decode("utf-8")


def save_index(index: EmbeddingIndex, path) -> None:
    with open(path, "wb") as f:
        f.write(INDEX_MAGIC)
        f.write(struct.pack("<I", INDEX_VERSION))
        f.write(struct.pack("<I", index.dimension))
        f.write(index.fingerprint[:32].ljust(32, b"\x00"))
        f.write(struct.pack("<Q", len(index.records)))
        for rec in index.records:
            _write_str(f, rec.clip.track_id)
            f.write(struct.pack("<f", rec.clip.offset))
            _write_str(f, rec.genre)
            _write_str(f, rec.mood)
            f.write(np.asarray(rec.embedding, dtype="<f4").tobytes())


def load_index(path, expected_fingerprint: bytes | None = None,
               allow_fingerprint_mismatch: bool = False) -> EmbeddingIndex:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != INDEX_MAGIC:
            raise IndexLoadError("bad magic %r in %s" % (magic, path))
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != INDEX_VERSION:
            raise IndexLoadError("unsupported index version %d" % version)
        (dim,) = struct.unpack("<I", _read_exact(f, 4))
        fingerprint = _read_exact(f, 32)
        (count,) = struct.unpack("<Q", _read_exact(f, 8))
        records = []
        for _ in range(count):
            track_id = _read_str(f)
            (offset,) = struct.unpack("<f", _read_exact(f, 4))
            genre = _read_str(f)
            mood = _read_str(f)
            emb = np.frombuffer(_read_exact(f, 4 * dim), dtype="<f4").astype(np.float64)
            records.append(EmbeddingRecord(
                clip=ClipRef(track_id=track_id, offset=float(offset)),
                embedding=emb, genre=genre, mood=mood))
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        if not allow_fingerprint_mismatch:
            raise FingerprintMismatch(
                "index was built by a different model file; pass "
                "allow_fingerprint_mismatch=True to query anyway")
    index = build_index(records, fingerprint=fingerprint)
    if index.dimension != dim:
        raise IndexLoadError("record dimension disagrees with header")
    return index
