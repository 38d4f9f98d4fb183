"""Human annotation sessions over a candidate queue.

Labels are applied strictly in queue order; the session completes when the
queue is exhausted or once ``stop_threshold`` consecutive pairs have been
labeled Different.  Each acknowledged label is appended to a JSON-lines file
before the session state advances, so a crash never loses acknowledged work
and a resumed session replays to the identical state.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import IO

from .errors import (
    CompletedSessionError,
    InvalidLabelError,
    OutOfOrderError,
    RecordParseError,
    WrongQueueError,
)
from .mining import CandidatePair, CandidateQueue

DEFAULT_STOP_THRESHOLD = 20


class DuplicateLabel(enum.Enum):
    """Four-way judgment of a candidate pair.

    The first three categories all count as duplicates downstream; only
    Different does not.
    """

    EXACT_DUPLICATE = "exact"
    NEAR_DUPLICATE = "near"
    VERY_SIMILAR = "similar"
    DIFFERENT = "different"

    @property
    def is_duplicate(self) -> bool:
        return self is not DuplicateLabel.DIFFERENT

    @classmethod
    def parse(cls, value: str) -> "DuplicateLabel":
        try:
            return cls(value)
        except ValueError:
            raise InvalidLabelError(
                f"unknown duplicate label {value!r} (expected exact|near|similar|different)"
            )


@dataclass(frozen=True)
class AnnotationRecord:
    pair: CandidatePair
    label: DuplicateLabel
    annotator: str
    timestamp: str  # ISO-8601 UTC

    def to_json(self) -> str:
        return json.dumps(
            {
                "query_index": self.pair.query_index,
                "neighbor_split": self.pair.neighbor_split,
                "neighbor_index": self.pair.neighbor_index,
                "distance": self.pair.distance,
                "label": self.label.value,
                "annotator": self.annotator,
                "timestamp": self.timestamp,
            }
        )


_REQUIRED_FIELDS = (
    "query_index",
    "neighbor_split",
    "neighbor_index",
    "distance",
    "label",
    "annotator",
    "timestamp",
)


def parse_annotation_line(line: str, line_number: int) -> AnnotationRecord:
    try:
        raw = json.loads(line)
        missing = [f for f in _REQUIRED_FIELDS if f not in raw]
        if missing:
            raise KeyError(", ".join(missing))
        pair = CandidatePair(
            query_index=int(raw["query_index"]),
            neighbor_index=int(raw["neighbor_index"]),
            neighbor_split=str(raw["neighbor_split"]),
            distance=float(raw["distance"]),
        )
    except InvalidLabelError:
        raise
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise RecordParseError(f"annotation line {line_number}: {exc}")
    label = DuplicateLabel.parse(str(raw["label"]))
    return AnnotationRecord(
        pair=pair, label=label, annotator=str(raw["annotator"]), timestamp=str(raw["timestamp"])
    )


def parse_annotations(text: str, tolerate_torn_tail: bool = False) -> list[AnnotationRecord]:
    """Parse a JSONL history; corrupt lines raise, naming the line number.

    With ``tolerate_torn_tail``, an unparseable FINAL line missing its
    newline is dropped instead: records are acknowledged only after their
    full line is flushed, so a torn tail can only be an unacknowledged write
    interrupted by a crash.
    """
    lines = text.splitlines()
    records = []
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(parse_annotation_line(line, i))
        except RecordParseError:
            if tolerate_torn_tail and i == len(lines) and not text.endswith("\n"):
                break
            raise
    return records


SESSION_COMPLETE = "session-complete"


class Session:
    """One single-annotator pass over a candidate queue.

    State invariants maintained after every mutation:

    * ``consecutive_different`` is the length of the maximal all-Different
      suffix of ``records``;
    * completed iff that counter reached ``stop_threshold`` or the cursor
      reached the end of the queue.
    """

    def __init__(
        self,
        queue: CandidateQueue,
        stop_threshold: int = DEFAULT_STOP_THRESHOLD,
        annotator: str = "anonymous",
        sink: IO[str] | None = None,
    ):
        if stop_threshold < 1:
            raise ValueError("stop_threshold must be a positive integer")
        self.queue = queue
        self.stop_threshold = stop_threshold
        self.annotator = annotator
        self.records: list[AnnotationRecord] = []
        self.cursor = 0
        self.consecutive_different = 0
        self._sink = sink

    @property
    def completed(self) -> bool:
        return self.consecutive_different >= self.stop_threshold or self.cursor >= len(self.queue)

    @property
    def state(self) -> str:
        return "completed" if self.completed else "active"

    def next_pair(self) -> CandidatePair | str:
        """Current queue head, or SESSION_COMPLETE. Does not mutate."""
        if self.completed:
            return SESSION_COMPLETE
        return self.queue.pairs[self.cursor]

    def label_counts(self) -> dict[str, int]:
        counts = {label.value: 0 for label in DuplicateLabel}
        for rec in self.records:
            counts[rec.label.value] += 1
        return counts

    def record_label(self, pair_id: int, label: DuplicateLabel | str) -> AnnotationRecord:
        """Label the queue head (pair_id must equal the cursor position).

        The record is persisted before state advances (write-ahead).
        """
        if isinstance(label, str):
            label = DuplicateLabel.parse(label)
        if self.completed:
            raise CompletedSessionError("session is already completed")
        if pair_id != self.cursor:
            raise OutOfOrderError(
                f"pair {pair_id} is not the queue head (expected {self.cursor}); "
                "labels are applied strictly in queue order"
            )
        record = AnnotationRecord(
            pair=self.queue.pairs[self.cursor],
            label=label,
            annotator=self.annotator,
            timestamp=datetime.now(timezone.utc).isoformat(),
        )
        if self._sink is not None:
            self._sink.write(record.to_json() + "\n")
            self._sink.flush()
            try:
                os.fsync(self._sink.fileno())
            except (OSError, ValueError, AttributeError):
                pass  # in-memory sinks have no fd
        self._apply(record)
        return record

    def _apply(self, record: AnnotationRecord):
        self.records.append(record)
        self.cursor += 1
        if record.label is DuplicateLabel.DIFFERENT:
            self.consecutive_different += 1
        else:
            self.consecutive_different = 0


def resume_session(
    records: list[AnnotationRecord],
    queue: CandidateQueue,
    stop_threshold: int = DEFAULT_STOP_THRESHOLD,
    annotator: str = "anonymous",
    sink: IO[str] | None = None,
) -> Session:
    """Rebuild a session from persisted records (idempotent replay).

    The records must form a prefix of this queue: each record's pair fields
    must equal the queue pair at the same position, otherwise the history
    belongs to a different queue.
    """
    session = Session(queue, stop_threshold=stop_threshold, annotator=annotator, sink=None)
    for i, record in enumerate(records):
        if i >= len(queue):
            raise WrongQueueError(f"history has {len(records)} records but queue only {len(queue)} pairs")
        expected = queue.pairs[i]
        if record.pair != expected:
            raise WrongQueueError(
                f"record {i} annotates pair {record.pair} but queue position {i} holds {expected}; "
                "history belongs to a different queue"
            )
        if session.completed:
            raise WrongQueueError(f"record {i} extends past the session completion point")
        session._apply(record)
    session._sink = sink
    return session
