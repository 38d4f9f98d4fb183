"""Shared builders for synthetic splits, features, and queues."""

from __future__ import annotations

import numpy as np
import pytest

from dupaudit.dataset_io import ImageRecord, Split
from dupaudit.features import FeatureMatrix, l2_normalize


def make_record(rng: np.random.Generator, num_classes: int, coarse: bool) -> ImageRecord:
    return ImageRecord(
        fine_label=int(rng.integers(0, num_classes)),
        coarse_label=int(rng.integers(0, 20)) if coarse else None,
        pixels=rng.integers(0, 256, size=3072, dtype=np.uint8).tobytes(),
    )


def make_split(
    rng: np.random.Generator,
    count: int,
    fmt: str = "cifar10",
    role: str = "test",
) -> Split:
    coarse = fmt == "cifar100"
    n_classes = 100 if coarse else 10
    records = tuple(make_record(rng, n_classes, coarse) for _ in range(count))
    return Split(role=role, num_classes=n_classes, records=records)


def unit_rows(rng: np.random.Generator, count: int, dim: int) -> FeatureMatrix:
    """Random L2-normalized float32 feature matrix."""
    raw = rng.standard_normal((count, dim)).astype(np.float32)
    return l2_normalize(FeatureMatrix(raw))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
