"""Aggregate annotation results: per-type counts, per-class leaders, duplicate fraction.

The duplicate fraction counts pairs (cross-split plus within-test) over the
test-set size.  The unique-image count is reported alongside it, since a
test image can appear in both queues.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable

from .annotation import AnnotationRecord, DuplicateLabel
from .dataset_io import Split
from .errors import InvalidLabelError

LABEL_ORDER = [
    DuplicateLabel.EXACT_DUPLICATE,
    DuplicateLabel.NEAR_DUPLICATE,
    DuplicateLabel.VERY_SIMILAR,
    DuplicateLabel.DIFFERENT,
]


@dataclass(frozen=True)
class DuplicateStats:
    cross_counts: dict[str, int]
    within_counts: dict[str, int]
    per_class: dict[int, int]  # test fine label -> duplicate-pair count
    test_size: int
    unique_duplicate_images: int

    @property
    def cross_duplicates(self) -> int:
        return sum(v for k, v in self.cross_counts.items() if k != DuplicateLabel.DIFFERENT.value)

    @property
    def within_duplicates(self) -> int:
        return sum(v for k, v in self.within_counts.items() if k != DuplicateLabel.DIFFERENT.value)

    @property
    def fraction(self) -> float:
        return (self.cross_duplicates + self.within_duplicates) / self.test_size


def compute_stats(annotations: Iterable[AnnotationRecord], test_split: Split) -> DuplicateStats:
    """Pure fold over the annotation records; permutation-invariant."""
    cross = {label.value: 0 for label in LABEL_ORDER}
    within = {label.value: 0 for label in LABEL_ORDER}
    per_class: dict[int, int] = {}
    unique: set[int] = set()
    for rec in annotations:
        q = rec.pair.query_index
        if not 0 <= q < len(test_split):
            raise InvalidLabelError(
                f"annotation references test index {q}, split has {len(test_split)} records"
            )
        bucket = cross if rec.pair.neighbor_split == "train" else within
        bucket[rec.label.value] += 1
        if rec.label.is_duplicate:
            cls = test_split.records[q].fine_label
            per_class[cls] = per_class.get(cls, 0) + 1
            unique.add(q)
    return DuplicateStats(
        cross_counts=cross,
        within_counts=within,
        per_class=per_class,
        test_size=len(test_split),
        unique_duplicate_images=len(unique),
    )


def top_classes(stats: DuplicateStats, k: int, class_names: tuple[str, ...]) -> list[tuple[str, int]]:
    """Classes with the most duplicates: descending count, ties by name ascending."""
    if k < 1:
        raise ValueError("k must be >= 1")
    named = [
        (class_names[cls], count) for cls, count in stats.per_class.items() if count > 0
    ]
    named.sort(key=lambda item: (-item[1], item[0]))
    return named[:k]


def zero_duplicate_classes(stats: DuplicateStats, class_names: tuple[str, ...]) -> list[str]:
    return sorted(
        name for cls, name in enumerate(class_names) if stats.per_class.get(cls, 0) == 0
    )


def render_report(
    stats: DuplicateStats,
    class_names: tuple[str, ...] | None = None,
    top_k: int = 14,
) -> tuple[str, str]:
    """Markdown report plus a machine-readable CSV of the same numbers.

    CSV columns: section,label,cross,within,total,value.  Sections:
    ``type_counts`` (per duplicate type), ``top_class``, ``summary``,
    ``zero_duplicate_class``.
    """
    names = class_names or tuple(str(i) for i in range(max(stats.per_class, default=-1) + 1))
    leaders = top_classes(stats, top_k, names) if stats.per_class else []
    zeros = zero_duplicate_classes(stats, names) if class_names else []

    md = io.StringIO()
    md.write("# Duplicate audit report\n\n")
    md.write(f"Test-set size: {stats.test_size}\n\n")
    md.write("## Duplicates per type\n\n")
    md.write("| Type | Test vs train | Within test |\n|---|---:|---:|\n")
    for label in LABEL_ORDER:
        md.write(
            f"| {label.value} | {stats.cross_counts[label.value]} "
            f"| {stats.within_counts[label.value]} |\n"
        )
    md.write("\n## Totals\n\n")
    md.write(f"- Cross-split duplicate pairs: {stats.cross_duplicates}\n")
    md.write(f"- Within-test duplicate pairs: {stats.within_duplicates}\n")
    md.write(
        f"- Duplicate fraction (pairs / test size): "
        f"{stats.fraction:.4f} ({stats.fraction * 100:.2f}%)\n"
    )
    md.write(f"- Unique test images involved: {stats.unique_duplicate_images}\n")
    if leaders:
        md.write(f"\n## Top {len(leaders)} classes\n\n| Class | Duplicates |\n|---|---:|\n")
        for name, count in leaders:
            md.write(f"| {name} | {count} |\n")
    if zeros:
        md.write("\n## Classes without any duplicates\n\n")
        md.write(", ".join(zeros) + "\n")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["section", "label", "cross", "within", "total", "value"])
    for label in LABEL_ORDER:
        c, w = stats.cross_counts[label.value], stats.within_counts[label.value]
        writer.writerow(["type_counts", label.value, c, w, c + w, ""])
    for name, count in leaders:
        writer.writerow(["top_class", name, "", "", count, ""])
    writer.writerow(["summary", "cross_duplicate_pairs", "", "", stats.cross_duplicates, ""])
    writer.writerow(["summary", "within_duplicate_pairs", "", "", stats.within_duplicates, ""])
    writer.writerow(["summary", "test_size", "", "", stats.test_size, ""])
    writer.writerow(["summary", "fraction", "", "", "", f"{stats.fraction:.6f}"])
    writer.writerow(
        ["summary", "unique_duplicate_images", "", "", stats.unique_duplicate_images, ""]
    )
    for name in zeros:
        writer.writerow(["zero_duplicate_class", name, "", "", 0, ""])
    return md.getvalue(), buf.getvalue()
