"""Vetted replacement of annotated duplicates and emission of the purged split.

Candidates come from a pool directory (images + aligned features + class
index file).  Each offered candidate is checked against the three nearest
neighbors in the training set plus the *current* test set, i.e. including
replacements approved earlier in the session, so approved newcomers can
never be unchecked duplicates of each other.  The approve/reject judgment
itself stays human; this module only enforces that it happened and records
what was shown.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace as dc_replace
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .annotation import AnnotationRecord
from .dataset_io import ImageRecord, Split, read_split
from .errors import (
    ConflictError,
    IncompletePurgeError,
    InsufficientReferencesError,
    InvalidLabelError,
    RecordParseError,
    ShapeError,
)
from .features import FeatureMatrix, read_features
from .mining import pair_distance

POOL_IMAGES = "images.bin"
POOL_FEATURES = "features.ftrs"
POOL_CLASSES = "classes.txt"


@dataclass(frozen=True)
class ReplacementCandidate:
    candidate_id: int  # position in pool file order
    pixels: bytes
    fine_label: int
    coarse_label: int | None
    feature: np.ndarray  # L2-normalized, float32


@dataclass(frozen=True)
class NeighborHit:
    split: str
    index: int
    distance: float


@dataclass(frozen=True)
class ReplacementDecision:
    candidate_id: int
    target_index: int
    neighbors: tuple[NeighborHit, NeighborHit, NeighborHit]
    approved: bool
    decider: str
    timestamp: str

    def __post_init__(self):
        if len(self.neighbors) != 3:
            raise ShapeError(f"decision must record exactly 3 neighbors, got {len(self.neighbors)}")
        dists = [n.distance for n in self.neighbors]
        if any(b < a for a, b in zip(dists, dists[1:])):
            raise ShapeError(f"neighbor distances must be nondecreasing, got {dists}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "candidate_id": self.candidate_id,
                "target_index": self.target_index,
                "neighbors": [
                    {"split": n.split, "index": n.index, "distance": n.distance}
                    for n in self.neighbors
                ],
                "approved": self.approved,
                "decider": self.decider,
                "timestamp": self.timestamp,
            }
        )


def parse_decision_line(line: str, line_number: int) -> ReplacementDecision:
    try:
        raw = json.loads(line)
        neighbors = tuple(
            NeighborHit(str(n["split"]), int(n["index"]), float(n["distance"]))
            for n in raw["neighbors"]
        )
        return ReplacementDecision(
            candidate_id=int(raw["candidate_id"]),
            target_index=int(raw["target_index"]),
            neighbors=neighbors,  # type: ignore[arg-type]
            approved=bool(raw["approved"]),
            decider=str(raw["decider"]),
            timestamp=str(raw["timestamp"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, ShapeError) as exc:
        raise RecordParseError(f"decision line {line_number}: {exc}")


def parse_decisions(text: str) -> list[ReplacementDecision]:
    out = []
    for i, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            out.append(parse_decision_line(line, i))
    return out


class CandidatePool:
    """Replacement candidates in pool-file order, never re-offered in a session."""

    def __init__(self, images: Split, features: FeatureMatrix, class_indices: Sequence[int]):
        if len(images) != features.count or len(images) != len(class_indices):
            raise ShapeError(
                f"pool misaligned: {len(images)} images, {features.count} feature rows, "
                f"{len(class_indices)} class indices"
            )
        for i, (rec, cls) in enumerate(zip(images.records, class_indices)):
            if rec.fine_label != cls:
                raise InvalidLabelError(
                    f"pool candidate {i}: class file says {cls} but image record says {rec.fine_label}"
                )
        self._images = images
        self._features = features

    def __len__(self) -> int:
        return len(self._images)

    def candidate(self, candidate_id: int) -> ReplacementCandidate:
        rec = self._images.records[candidate_id]
        return ReplacementCandidate(
            candidate_id=candidate_id,
            pixels=rec.pixels,
            fine_label=rec.fine_label,
            coarse_label=rec.coarse_label,
            feature=self._features.values[candidate_id],
        )

    def iter_for_class(
        self, fine_label: int, coarse_label: int | None, skip: set[int]
    ) -> Iterable[ReplacementCandidate]:
        """Candidates matching the target's label(s), in pool order, minus consumed ids."""
        for i, rec in enumerate(self._images.records):
            if i in skip:
                continue
            if rec.fine_label != fine_label:
                continue
            if coarse_label is not None and rec.coarse_label != coarse_label:
                continue
            yield self.candidate(i)


def load_pool(directory: str | Path, fmt: str) -> CandidatePool:
    directory = Path(directory)
    images = read_split((directory / POOL_IMAGES).read_bytes(), fmt, role="train")
    features = read_features((directory / POOL_FEATURES).read_bytes())
    classes = [
        int(line) for line in (directory / POOL_CLASSES).read_text().splitlines() if line.strip()
    ]
    return CandidatePool(images, features, classes)


def knn3(
    candidate_feature: np.ndarray,
    references: Sequence[tuple[str, np.ndarray]],
) -> tuple[NeighborHit, NeighborHit, NeighborHit]:
    """Exact three nearest neighbors over the given reference splits.

    ``references`` is an ordered sequence of (split name, row matrix); ties
    in distance resolve by reference order (train is passed before test),
    then by row index.  Reported distances are recomputed per selected pair
    with the canonical expression, matching the brute-force oracle bitwise.
    """
    q = np.asarray(candidate_feature, dtype=np.float64)
    total = sum(m.shape[0] for _, m in references)
    if total < 3:
        raise InsufficientReferencesError(f"need at least 3 reference rows, got {total}")
    ranked: list[tuple[float, int, int, str, np.ndarray]] = []
    q_sq = float(np.dot(q, q))
    for rank, (name, matrix) in enumerate(references):
        m64 = np.asarray(matrix, dtype=np.float64)
        if m64.shape[1] != q.shape[0]:
            raise ShapeError(
                f"reference {name!r} has dim {m64.shape[1]}, candidate has {q.shape[0]}"
            )
        d2 = q_sq + np.einsum("ij,ij->i", m64, m64) - 2.0 * (m64 @ q)
        order = np.lexsort((np.arange(m64.shape[0]), d2))[:3]
        for idx in order:
            ranked.append((float(d2[idx]), rank, int(idx), name, m64[idx]))
    ranked.sort(key=lambda item: item[:3])
    hits = tuple(
        NeighborHit(split=name, index=idx, distance=pair_distance(q, row))
        for _d2, _rank, idx, name, row in ranked[:3]
    )
    return hits  # type: ignore[return-value]


def duplicate_test_indices(annotations: Iterable[AnnotationRecord]) -> list[int]:
    """Test indices flagged for replacement: the query side of every duplicate pair."""
    return sorted({rec.pair.query_index for rec in annotations if rec.label.is_duplicate})


@dataclass(frozen=True)
class CandidateOffer:
    candidate: ReplacementCandidate
    neighbors: tuple[NeighborHit, ...]
    target_index: int


@dataclass(frozen=True)
class PoolExhausted:
    """Signal that the pool ran out of candidates for one target's class."""

    target_index: int
    class_index: int


class ReplacementSession:
    """Serialized approve/reject flow over all flagged duplicate indices.

    Decisions are single-writer because each approval swaps the target's row
    in the test feature matrix, changing the reference set for the next
    three-neighbor check.
    """

    def __init__(
        self,
        pool: CandidatePool,
        test_split: Split,
        train_features: FeatureMatrix,
        test_features: FeatureMatrix,
        targets: Sequence[int],
        decider: str = "anonymous",
        sink: IO[str] | None = None,
    ):
        if test_features.count != len(test_split):
            raise ShapeError(
                f"test features have {test_features.count} rows for {len(test_split)} records"
            )
        self.pool = pool
        self.test_split = test_split
        self._train64 = train_features.values.astype(np.float64)
        self._test64 = test_features.values.astype(np.float64)
        self.targets = list(targets)
        self.decider = decider
        self.decisions: list[ReplacementDecision] = []
        self.consumed: set[int] = set()
        self.exhausted: list[PoolExhausted] = []  # targets whose class pool ran dry
        self._target_pos = 0
        self._offer: CandidateOffer | None = None
        self._sink = sink

    @property
    def completed(self) -> bool:
        return self._target_pos >= len(self.targets)

    @property
    def current_target(self) -> int | None:
        return None if self.completed else self.targets[self._target_pos]

    def next_candidate(self) -> CandidateOffer | PoolExhausted | None:
        """Current offer, a pool-exhausted signal, or None when all targets are done.

        A PoolExhausted signal names the class and advances past its target;
        that target stays unreplaced, which the purge step will reject.
        """
        if self.completed:
            return None
        if self._offer is not None:
            return self._offer
        target = self.targets[self._target_pos]
        record = self.test_split.records[target]
        for cand in self.pool.iter_for_class(record.fine_label, record.coarse_label, self.consumed):
            hits = knn3(cand.feature, [("train", self._train64), ("test", self._test64)])
            self._offer = CandidateOffer(candidate=cand, neighbors=hits, target_index=target)
            return self._offer
        notice = PoolExhausted(target_index=target, class_index=record.fine_label)
        self.exhausted.append(notice)
        self._target_pos += 1
        return notice

    def decide(self, candidate_id: int, approved: bool) -> ReplacementDecision:
        if self._offer is None:
            raise ConflictError("no candidate is currently offered")
        offer = self._offer
        if offer.candidate.candidate_id != candidate_id:
            raise ConflictError(
                f"decision names candidate {candidate_id} but the current offer is "
                f"{offer.candidate.candidate_id}"
            )
        decision = ReplacementDecision(
            candidate_id=offer.candidate.candidate_id,
            target_index=offer.target_index,
            neighbors=offer.neighbors,  # type: ignore[arg-type]
            approved=approved,
            decider=self.decider,
            timestamp=datetime.now(timezone.utc).isoformat(),
        )
        if self._sink is not None:
            self._sink.write(decision.to_json() + "\n")
            self._sink.flush()
        self.decisions.append(decision)
        self.consumed.add(offer.candidate.candidate_id)
        self._offer = None
        if approved:
            self._test64[offer.target_index] = np.asarray(offer.candidate.feature, dtype=np.float64)
            self._target_pos += 1
        return decision

    def replay(self, decisions: Iterable[ReplacementDecision]):
        """Re-apply persisted decisions to resume an interrupted session."""
        for d in decisions:
            offer = self.next_candidate()
            while offer is not None and not isinstance(offer, CandidateOffer):
                offer = self.next_candidate()
            if offer is None:
                raise ConflictError("persisted decision extends past the session's candidate supply")
            self.decide(d.candidate_id, d.approved)


def apply_replacements(
    test_split: Split,
    decisions: Iterable[ReplacementDecision],
    duplicate_indices: Iterable[int],
    pool: CandidatePool,
) -> Split:
    """Emit the purged split: same length, same labels, duplicates' pixels swapped.

    Every flagged index needs exactly one approved decision; the full list of
    unreplaced indices is reported at once so the operator can extend the
    pool in one pass.
    """
    flagged = set(duplicate_indices)
    approved: dict[int, ReplacementDecision] = {}
    for d in decisions:
        if not d.approved:
            continue
        if d.target_index in approved:
            raise ConflictError(
                f"two approved decisions for test index {d.target_index} "
                f"(candidates {approved[d.target_index].candidate_id} and {d.candidate_id})"
            )
        if d.target_index not in flagged:
            raise ConflictError(
                f"approved decision targets index {d.target_index}, which is not a flagged duplicate"
            )
        approved[d.target_index] = d
    missing = flagged - approved.keys()
    if missing:
        raise IncompletePurgeError(sorted(missing))
    records = list(test_split.records)
    for idx, decision in approved.items():
        original = records[idx]
        cand = pool.candidate(decision.candidate_id)
        if cand.fine_label != original.fine_label or (
            original.coarse_label is not None and cand.coarse_label != original.coarse_label
        ):
            raise InvalidLabelError(
                f"candidate {cand.candidate_id} labels do not match test record {idx}"
            )
        records[idx] = ImageRecord(
            fine_label=original.fine_label,
            coarse_label=original.coarse_label,
            pixels=cand.pixels,
        )
    return dc_replace(test_split, records=tuple(records))
