"""Exact nearest-neighbor mining of duplicate candidates.

Search is exact brute force over chunked float64 distance computations; no
approximate index.  Selection per query minimizes the squared Euclidean
distance, ties broken by the smallest neighbor index.  The distance reported
for the selected pair is recomputed per pair with one canonical expression
(:func:`pair_distance`), so results are bit-identical across chunkings,
worker counts, and the brute-force reference loop.

Queries are partitioned into fixed-size chunks; the worker pool only
schedules those chunks, so the arithmetic never depends on thread count.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (
    ContractViolationError,
    InsufficientRowsError,
    MalformedFileError,
    ShapeError,
)
from .features import FeatureMatrix

MAX_UNIT_DISTANCE = 2.0 + 1e-6  # diameter of the unit sphere, with float slack
_CHUNK = 256  # queries per task; fixed so results cannot depend on worker count

_SPLIT_RANK = {"train": 0, "test": 1}


@dataclass(frozen=True)
class CandidatePair:
    """Nearest neighbor of one test image, the unit of annotation."""

    query_index: int
    neighbor_index: int
    neighbor_split: str  # "train" | "test"
    distance: float

    def __post_init__(self):
        if self.neighbor_split not in _SPLIT_RANK:
            raise ValueError(f"neighbor_split must be train or test, got {self.neighbor_split!r}")
        if not 0.0 <= self.distance <= MAX_UNIT_DISTANCE:
            raise ValueError(f"distance {self.distance} outside [0, 2] for unit vectors")
        if self.neighbor_split == "test" and self.neighbor_index == self.query_index:
            raise ValueError(f"within-test pair for query {self.query_index} points at itself")

    def sort_key(self) -> tuple[float, int, int]:
        # ascending distance; ties cross-before-within, then by query index
        return (self.distance, _SPLIT_RANK[self.neighbor_split], self.query_index)


@dataclass(frozen=True)
class QueueProvenance:
    """SHA-256 hex digests of the feature files the queue was mined from."""

    test_features_sha256: str
    train_features_sha256: str

    @classmethod
    def empty(cls) -> "QueueProvenance":
        return cls("0" * 64, "0" * 64)


@dataclass(frozen=True)
class CandidateQueue:
    """Distance-sorted annotation queue with at most one pair per query per kind."""

    pairs: tuple[CandidatePair, ...]
    provenance: QueueProvenance

    def __post_init__(self):
        seen: set[tuple[int, str]] = set()
        prev = -1.0
        for p in self.pairs:
            if p.distance < prev:
                raise ValueError("queue pairs are not sorted by ascending distance")
            prev = p.distance
            key = (p.query_index, p.neighbor_split)
            if key in seen:
                raise ValueError(f"duplicate queue entry for query {key[0]} ({key[1]})")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.pairs)


def pair_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Canonical Euclidean distance between two feature rows, in float64.

    Both the chunked search and the test oracles report distances through
    this single expression, which keeps their outputs bitwise comparable and
    makes the distance of bit-identical rows exactly 0.0.
    """
    d = np.asarray(u, dtype=np.float64) - np.asarray(v, dtype=np.float64)
    return math.sqrt(max(0.0, float(np.dot(d, d))))


def _require_normalized(name: str, m: FeatureMatrix):
    if not m.normalized:
        raise ContractViolationError(f"{name} features must be L2-normalized before mining")


def _nearest_chunk(
    queries: np.ndarray, refs: np.ndarray, refs_sq: np.ndarray, exclude_base: int | None
) -> np.ndarray:
    """Index of the squared-distance argmin per query row (first occurrence wins)."""
    q_sq = np.einsum("ij,ij->i", queries, queries)
    d2 = q_sq[:, None] + refs_sq[None, :] - 2.0 * (queries @ refs.T)
    if exclude_base is not None:
        n = queries.shape[0]
        d2[np.arange(n), exclude_base + np.arange(n)] = np.inf
    return np.argmin(d2, axis=1)


def _nearest_all(test: np.ndarray, refs: np.ndarray, exclude_self: bool, threads: int | None) -> np.ndarray:
    refs_sq = np.einsum("ij,ij->i", refs, refs)
    starts = range(0, test.shape[0], _CHUNK)

    def task(start: int) -> tuple[int, np.ndarray]:
        chunk = test[start : start + _CHUNK]
        base = start if exclude_self else None
        return start, _nearest_chunk(chunk, refs, refs_sq, base)

    out = np.empty(test.shape[0], dtype=np.int64)
    if threads is not None and threads <= 1:
        results = map(task, starts)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(task, starts))
    for start, idx in results:
        out[start : start + len(idx)] = idx
    return out


def mine_cross(test: FeatureMatrix, train: FeatureMatrix, threads: int | None = None) -> list[CandidatePair]:
    """For every test row, the nearest training row by Euclidean distance."""
    _require_normalized("test", test)
    _require_normalized("train", train)
    if test.dim != train.dim:
        raise ShapeError(f"feature dims differ: test {test.dim} vs train {train.dim}")
    if train.count < 1:
        raise InsufficientRowsError("training features are empty")
    t64 = test.values.astype(np.float64)
    r64 = train.values.astype(np.float64)
    nearest = _nearest_all(t64, r64, exclude_self=False, threads=threads)
    return [
        CandidatePair(q, int(n), "train", pair_distance(t64[q], r64[n]))
        for q, n in enumerate(nearest)
    ]


def mine_within(test: FeatureMatrix, threads: int | None = None) -> list[CandidatePair]:
    """For every test row, the nearest other test row (self excluded)."""
    _require_normalized("test", test)
    if test.count < 2:
        raise InsufficientRowsError(f"within-test search needs >= 2 rows, got {test.count}")
    t64 = test.values.astype(np.float64)
    nearest = _nearest_all(t64, t64, exclude_self=True, threads=threads)
    return [
        CandidatePair(q, int(n), "test", pair_distance(t64[q], t64[n]))
        for q, n in enumerate(nearest)
    ]


def build_queue(
    cross: list[CandidatePair],
    within: list[CandidatePair] | None = None,
    provenance: QueueProvenance | None = None,
) -> CandidateQueue:
    """Merge cross-split and within-test pairs into one ascending queue."""
    merged = sorted(list(cross) + list(within or []), key=CandidatePair.sort_key)
    return CandidateQueue(pairs=tuple(merged), provenance=provenance or QueueProvenance.empty())


# --- queue persistence: binary file plus human-readable CSV ----------------

_QUEUE_MAGIC = b"DUPQ"
_QUEUE_HEADER = struct.Struct("<4sHH32s32sQ")
_QUEUE_PAIR = struct.Struct("<IBId")


def write_queue(queue: CandidateQueue) -> bytes:
    header = _QUEUE_HEADER.pack(
        _QUEUE_MAGIC,
        1,
        0,
        bytes.fromhex(queue.provenance.test_features_sha256),
        bytes.fromhex(queue.provenance.train_features_sha256),
        len(queue.pairs),
    )
    body = b"".join(
        _QUEUE_PAIR.pack(p.query_index, _SPLIT_RANK[p.neighbor_split], p.neighbor_index, p.distance)
        for p in queue.pairs
    )
    return header + body


def read_queue(data: bytes) -> CandidateQueue:
    if len(data) < _QUEUE_HEADER.size or data[:4] != _QUEUE_MAGIC:
        raise MalformedFileError("not a candidate queue file (missing DUPQ magic)")
    magic, version, _flags, test_hash, train_hash, count = _QUEUE_HEADER.unpack_from(data)
    if version != 1:
        raise MalformedFileError(f"unsupported queue file version {version}")
    body = data[_QUEUE_HEADER.size :]
    if len(body) != count * _QUEUE_PAIR.size:
        raise MalformedFileError(
            f"queue body is {len(body)} bytes, expected {count} pairs x {_QUEUE_PAIR.size} bytes"
        )
    names = {rank: name for name, rank in _SPLIT_RANK.items()}
    pairs = []
    for i in range(count):
        q, rank, n, dist = _QUEUE_PAIR.unpack_from(body, i * _QUEUE_PAIR.size)
        pairs.append(CandidatePair(q, n, names[rank], dist))
    provenance = QueueProvenance(test_hash.hex(), train_hash.hex())
    return CandidateQueue(pairs=tuple(pairs), provenance=provenance)


def queue_csv(queue: CandidateQueue) -> str:
    """Audit copy: query_index,neighbor_split,neighbor_index,distance (6 decimals)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["query_index", "neighbor_split", "neighbor_index", "distance"])
    for p in queue.pairs:
        writer.writerow([p.query_index, p.neighbor_split, p.neighbor_index, f"{p.distance:.6f}"])
    return buf.getvalue()
