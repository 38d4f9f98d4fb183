"""Error-rate gap between the original and the purged test set.

Consumes externally produced prediction files (one integer per line, line i
predicting test record i, optional ``# model: <name>`` header comment); no
inference happens here.  Percentages are rendered to two decimals in the
reports while all internal arithmetic stays full precision.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

from .annotation import AnnotationRecord
from .errors import EmptySubsetError, MalformedFileError, ShapeError


@dataclass(frozen=True)
class PredictionSet:
    model: str
    predictions: tuple[int, ...]


@dataclass(frozen=True)
class ModelGap:
    model: str
    err_orig: float
    err_fair: float
    gap_abs: float
    gap_rel: float | None  # None when err_orig == 0
    duplicate_subset_error: float | None = None


@dataclass(frozen=True)
class GapReport:
    rows: tuple[ModelGap, ...]
    mean_gap_abs: float
    mean_gap_rel: float | None
    rank_orig: tuple[str, ...]
    rank_fair: tuple[str, ...]
    swapped_pairs: tuple[tuple[str, str], ...]


def parse_predictions(text: str, fallback_name: str = "model") -> PredictionSet:
    name = fallback_name
    values = []
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            comment = stripped.lstrip("#").strip()
            if comment.lower().startswith("model:"):
                name = comment[len("model:") :].strip()
            continue
        try:
            values.append(int(stripped))
        except ValueError:
            raise MalformedFileError(f"prediction line {i} is not an integer: {stripped!r}")
    return PredictionSet(model=name, predictions=tuple(values))


def error_rate(predictions: Sequence[int], labels: Sequence[int]) -> float:
    if len(predictions) != len(labels):
        raise ShapeError(
            f"{len(predictions)} predictions for {len(labels)} labels"
        )
    if not labels:
        raise ShapeError("cannot compute an error rate over zero records")
    wrong = sum(1 for p, t in zip(predictions, labels) if p != t)
    return wrong / len(labels)


def gap(err_orig: float, err_fair: float) -> tuple[float, float | None]:
    """Absolute gap and, when defined, the gap relative to the original error."""
    gap_abs = err_fair - err_orig
    gap_rel = gap_abs / err_orig if err_orig > 0 else None
    return gap_abs, gap_rel


def subset_error(predictions: Sequence[int], labels: Sequence[int], indices: Sequence[int]) -> float:
    if len(predictions) != len(labels):
        raise ShapeError(f"{len(predictions)} predictions for {len(labels)} labels")
    if not indices:
        raise EmptySubsetError("subset error over an empty index set is undefined")
    for i in indices:
        if not 0 <= i < len(labels):
            raise ShapeError(f"subset index {i} out of range for {len(labels)} records")
    wrong = sum(1 for i in indices if predictions[i] != labels[i])
    return wrong / len(indices)


def cross_duplicate_indices(annotations: Iterable[AnnotationRecord]) -> list[int]:
    """Test images with a duplicate in the training set, from the annotation log."""
    return sorted(
        {
            rec.pair.query_index
            for rec in annotations
            if rec.label.is_duplicate and rec.pair.neighbor_split == "train"
        }
    )


def _ranking(models: Sequence[ModelGap], key) -> tuple[str, ...]:
    # stable ascending-error ranking; equal errors keep input order
    return tuple(m.model for m in sorted(models, key=lambda m: (key(m),)))


def _inversions(a: Sequence[str], b: Sequence[str]) -> list[tuple[str, str]]:
    pos_b = {name: i for i, name in enumerate(b)}
    swapped = []
    for i in range(len(a)):
        for j in range(i + 1, len(a)):
            if pos_b[a[i]] > pos_b[a[j]]:
                swapped.append(tuple(sorted((a[i], a[j]))))
    return sorted(set(swapped))


def build_report(
    models: Sequence[tuple[str, Sequence[int], Sequence[int]]],
    labels_orig: Sequence[int],
    labels_fair: Sequence[int],
    duplicate_indices: Sequence[int] | None = None,
) -> GapReport:
    """Per-model gap rows plus means, rank lists, and rank inversions.

    ``models`` holds (name, predictions on original test, predictions on
    purged test) triples.  When ``duplicate_indices`` is given, each model's
    error on that subset of the original test set is included.
    """
    if not models:
        raise ShapeError("report needs at least one model")
    rows = []
    for name, pred_orig, pred_fair in models:
        err_o = error_rate(pred_orig, labels_orig)
        err_f = error_rate(pred_fair, labels_fair)
        g_abs, g_rel = gap(err_o, err_f)
        dup_err = (
            subset_error(pred_orig, labels_orig, duplicate_indices)
            if duplicate_indices
            else None
        )
        rows.append(
            ModelGap(
                model=name,
                err_orig=err_o,
                err_fair=err_f,
                gap_abs=g_abs,
                gap_rel=g_rel,
                duplicate_subset_error=dup_err,
            )
        )
    mean_abs = sum(r.gap_abs for r in rows) / len(rows)
    rels = [r.gap_rel for r in rows if r.gap_rel is not None]
    mean_rel = sum(rels) / len(rels) if rels else None
    rank_orig = _ranking(rows, lambda m: m.err_orig)
    rank_fair = _ranking(rows, lambda m: m.err_fair)
    return GapReport(
        rows=tuple(rows),
        mean_gap_abs=mean_abs,
        mean_gap_rel=mean_rel,
        rank_orig=rank_orig,
        rank_fair=rank_fair,
        swapped_pairs=tuple(_inversions(rank_orig, rank_fair)),
    )


def report_from_prediction_sets(
    pairs: Sequence[tuple[PredictionSet, PredictionSet]],
    labels_orig: Sequence[int],
    labels_fair: Sequence[int],
    duplicate_indices: Sequence[int] | None = None,
) -> GapReport:
    models = [
        (orig.model, orig.predictions, fair.predictions) for orig, fair in pairs
    ]
    return build_report(models, labels_orig, labels_fair, duplicate_indices)


def _pct(x: float | None) -> str:
    return "—" if x is None else f"{x * 100:.2f}%"


def render_gap_report(report: GapReport) -> tuple[str, str]:
    """Markdown and CSV documents for a GapReport."""
    md = io.StringIO()
    md.write("# Evaluation gap report\n\n")
    md.write("| Model | Original | Purged | Gap | Rel. gap | Duplicate-subset error |\n")
    md.write("|---|---:|---:|---:|---:|---:|\n")
    for r in report.rows:
        md.write(
            f"| {r.model} | {_pct(r.err_orig)} | {_pct(r.err_fair)} | {_pct(r.gap_abs)} "
            f"| {_pct(r.gap_rel)} | {_pct(r.duplicate_subset_error)} |\n"
        )
    md.write(
        f"| **mean** | | | {_pct(report.mean_gap_abs)} | {_pct(report.mean_gap_rel)} | |\n"
    )
    md.write("\n## Rankings (best first)\n\n")
    md.write(f"- Original test set: {', '.join(report.rank_orig)}\n")
    md.write(f"- Purged test set: {', '.join(report.rank_fair)}\n")
    if report.swapped_pairs:
        swaps = "; ".join(f"{a} ↔ {b}" for a, b in report.swapped_pairs)
        md.write(f"- Swapped positions: {swaps}\n")
    else:
        md.write("- Swapped positions: none (ranking unchanged)\n")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        [
            "model",
            "err_orig",
            "err_fair",
            "gap_abs",
            "gap_rel",
            "duplicate_subset_error",
            "rank_orig",
            "rank_fair",
            "rank_changed",
        ]
    )
    rank_o = {name: i + 1 for i, name in enumerate(report.rank_orig)}
    rank_f = {name: i + 1 for i, name in enumerate(report.rank_fair)}
    for r in report.rows:
        writer.writerow(
            [
                r.model,
                f"{r.err_orig:.6f}",
                f"{r.err_fair:.6f}",
                f"{r.gap_abs:.6f}",
                "" if r.gap_rel is None else f"{r.gap_rel:.6f}",
                "" if r.duplicate_subset_error is None else f"{r.duplicate_subset_error:.6f}",
                rank_o[r.model],
                rank_f[r.model],
                int(rank_o[r.model] != rank_f[r.model]),
            ]
        )
    writer.writerow(
        [
            "mean",
            "",
            "",
            f"{report.mean_gap_abs:.6f}",
            "" if report.mean_gap_rel is None else f"{report.mean_gap_rel:.6f}",
            "",
            "",
            "",
            "",
        ]
    )
    return md.getvalue(), buf.getvalue()
