"""Per-image feature matrix: validation, L2 normalization, FTRS file format.

FTRS layout (little-endian, 24-byte header):

    [magic "FTRS"][version u16 = 1][flags u16, bit0 = L2-normalized]
    [count u64][dim u32][reserved u32 = 0][count*dim float32 row-major]

Row i of a matrix corresponds positionally to record i of its split.
Matrices are immutable after construction and shareable across workers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    ContractViolationError,
    NotAFeatureFileError,
    ShapeError,
    TruncatedFileError,
    ZeroVectorError,
)

MAGIC = b"FTRS"
VERSION = 1
_HEADER = struct.Struct("<4sHHQII")
NORM_TOLERANCE = 1e-4  # float32 accumulation slack for the "normalized" invariant


@dataclass(frozen=True)
class FeatureMatrix:
    """count x dim float32 matrix of per-image descriptors."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise ShapeError(f"feature matrix must be 2-D, got shape {v.shape}")
        if v.dtype != np.float32:
            v = v.astype(np.float32)
        if not np.isfinite(v).all():
            raise ContractViolationError("feature matrix contains NaN or Inf values")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.normalized:
            norms = np.linalg.norm(v.astype(np.float64), axis=1)
            bad = np.nonzero(np.abs(norms - 1.0) > NORM_TOLERANCE)[0]
            if bad.size:
                raise ContractViolationError(
                    f"matrix flagged normalized but row {bad[0]} has norm {norms[bad[0]]:.6g}"
                )

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def l2_normalize(m: FeatureMatrix) -> FeatureMatrix:
    """Divide each row by its Euclidean norm; idempotent up to float32 rounding.

    A row with norm <= 1e-12 raises ZeroVectorError naming the row: a zero
    descriptor carries no direction, so cosine comparison is meaningless.
    """
    norms = np.linalg.norm(m.values.astype(np.float64), axis=1)
    dead = np.nonzero(norms <= 1e-12)[0]
    if dead.size:
        raise ZeroVectorError(f"row {dead[0]} has norm {norms[dead[0]]:.3g}, cannot normalize")
    scaled = (m.values.astype(np.float64) / norms[:, None]).astype(np.float32)
    return FeatureMatrix(values=scaled, normalized=True)


def write_features(m: FeatureMatrix) -> bytes:
    """Serialize to FTRS bytes; lossless for the float32 payload."""
    flags = 1 if m.normalized else 0
    header = _HEADER.pack(MAGIC, VERSION, flags, m.count, m.dim, 0)
    return header + m.values.astype("<f4").tobytes(order="C")


def read_features(data: bytes) -> FeatureMatrix:
    """Parse FTRS bytes back into a matrix (exact round trip of write_features)."""
    if len(data) < _HEADER.size or data[:4] != MAGIC:
        raise NotAFeatureFileError("missing FTRS magic: not a feature file")
    magic, version, flags, count, dim, _reserved = _HEADER.unpack_from(data)
    if version != VERSION:
        raise NotAFeatureFileError(f"unsupported feature file version {version}")
    expected = count * dim * 4
    payload = data[_HEADER.size :]
    if len(payload) != expected:
        raise TruncatedFileError(
            f"feature payload is {len(payload)} bytes, header declares "
            f"{count}x{dim} float32 = {expected} bytes"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()
    return FeatureMatrix(values=values, normalized=bool(flags & 1))
