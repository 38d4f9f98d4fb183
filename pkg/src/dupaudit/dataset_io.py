"""Bit-exact reading and writing of CIFAR-style binary splits.

Record layouts (de-facto standard of the upstream binary distribution):

* ``cifar10``  — 3073 bytes: ``[fine u8][1024 R][1024 G][1024 B]``
* ``cifar100`` — 3074 bytes: ``[coarse u8][fine u8][1024 R][1024 G][1024 B]``

Pixel planes are row-major 32x32, red plane first.  All operations here are
pure functions over immutable values and are safe under any concurrency.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidLabelError, MalformedFileError, MissingLabelError, ShapeError

PIXELS_PER_IMAGE = 3072
IMAGE_SIDE = 32

_FORMATS = {
    # name: (record_size, num_classes, num_coarse or None)
    "cifar10": (3073, 10, None),
    "cifar100": (3074, 100, 20),
}


def record_size(fmt: str) -> int:
    """Byte length of one record in the given format."""
    return _spec(fmt)[0]


def num_classes(fmt: str) -> int:
    return _spec(fmt)[1]


def _spec(fmt: str) -> tuple[int, int, int | None]:
    try:
        return _FORMATS[fmt]
    except KeyError:
        raise ValueError(f"unknown dataset format {fmt!r} (expected cifar10 or cifar100)")


@dataclass(frozen=True)
class ImageRecord:
    """One 32x32 RGB image with its class label(s).

    ``pixels`` holds exactly 3072 bytes in planar layout.  ``coarse_label``
    is None for 10-class datasets.
    """

    fine_label: int
    pixels: bytes
    coarse_label: int | None = None

    def __post_init__(self):
        if len(self.pixels) != PIXELS_PER_IMAGE:
            raise ShapeError(
                f"image record needs {PIXELS_PER_IMAGE} pixel bytes, got {len(self.pixels)}"
            )


@dataclass(frozen=True)
class Split:
    """An ordered dataset split; record order is significant."""

    role: str  # "train" | "test"
    num_classes: int
    records: tuple[ImageRecord, ...]
    class_names: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        if self.role not in ("train", "test"):
            raise ValueError(f"split role must be 'train' or 'test', got {self.role!r}")
        if self.class_names is not None and len(self.class_names) != self.num_classes:
            raise ShapeError(
                f"class name list has {len(self.class_names)} entries, "
                f"expected {self.num_classes}"
            )
        for i, rec in enumerate(self.records):
            if not 0 <= rec.fine_label < self.num_classes:
                raise InvalidLabelError(
                    f"record {i}: fine label {rec.fine_label} out of range "
                    f"for {self.num_classes} classes"
                )

    def __len__(self) -> int:
        return len(self.records)

    def with_class_names(self, names: tuple[str, ...]) -> "Split":
        return replace(self, class_names=names)


def read_split(data: bytes, fmt: str, role: str = "test") -> Split:
    """Parse a binary split, preserving record order.

    Raises MalformedFileError when the byte count is not a whole number of
    records, and InvalidLabelError (with the record index) when a label byte
    is out of range.
    """
    rec_size, n_classes, n_coarse = _spec(fmt)
    if len(data) % rec_size != 0:
        raise MalformedFileError(
            f"{fmt} file length {len(data)} is not a multiple of the "
            f"{rec_size}-byte record size"
        )
    records = []
    for i in range(len(data) // rec_size):
        off = i * rec_size
        if n_coarse is None:
            fine = data[off]
            coarse = None
            pix_off = off + 1
        else:
            coarse = data[off]
            fine = data[off + 1]
            pix_off = off + 2
            if coarse >= n_coarse:
                raise InvalidLabelError(
                    f"record {i}: coarse label {coarse} out of range (< {n_coarse})"
                )
        if fine >= n_classes:
            raise InvalidLabelError(
                f"record {i}: fine label {fine} out of range (< {n_classes})"
            )
        records.append(
            ImageRecord(fine_label=fine, coarse_label=coarse, pixels=data[pix_off : pix_off + PIXELS_PER_IMAGE])
        )
    return Split(role=role, num_classes=n_classes, records=tuple(records))


def write_split(split: Split, fmt: str) -> bytes:
    """Serialize a split; read_split(write_split(s)) == s byte-for-byte."""
    rec_size, n_classes, n_coarse = _spec(fmt)
    if split.num_classes != n_classes:
        raise ShapeError(
            f"split has {split.num_classes} classes, {fmt} requires {n_classes}"
        )
    out = bytearray()
    for i, rec in enumerate(split.records):
        if n_coarse is None:
            out.append(rec.fine_label)
        else:
            if rec.coarse_label is None:
                raise MissingLabelError(f"record {i} lacks the coarse label {fmt} requires")
            out.append(rec.coarse_label)
            out.append(rec.fine_label)
        out.extend(rec.pixels)
    assert len(out) == len(split.records) * rec_size
    return bytes(out)


def diff_image(a: ImageRecord, b: ImageRecord) -> bytes:
    """Pixel-wise absolute difference, computed without uint8 wraparound."""
    pa = np.frombuffer(a.pixels, dtype=np.uint8).astype(np.int16)
    pb = np.frombuffer(b.pixels, dtype=np.uint8).astype(np.int16)
    return np.abs(pa - pb).astype(np.uint8).tobytes()


def read_class_names(text: str, n_classes: int) -> tuple[str, ...]:
    """Parse the sidecar class-name file: UTF-8, one name per line, line i names class i."""
    names = [line.strip() for line in text.splitlines()]
    while names and names[-1] == "":
        names.pop()
    if len(names) != n_classes:
        raise ShapeError(
            f"class name file has {len(names)} nonempty lines, expected {n_classes}"
        )
    return tuple(names)


def planar_to_interleaved(pixels: bytes) -> np.ndarray:
    """Planar 3x1024 bytes -> HxWx3 uint8 array (for display/PNG encoding)."""
    arr = np.frombuffer(pixels, dtype=np.uint8).reshape(3, IMAGE_SIDE, IMAGE_SIDE)
    return np.transpose(arr, (1, 2, 0)).copy()
