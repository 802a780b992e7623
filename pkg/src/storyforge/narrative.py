"""Narrative-equilibrium stage model, narrativity scoring, and annotations.

A text's narrativity is the number of distinct stage types an annotator
could interpret in it, floored at 1 so the value stays on the 1-5 scale.
Criteria ratings use a 3-point Likert coding (3=Agree, 2=Neutral,
1=Disagree); the overall quality of a retelling is the minimum of the
three criteria, since failing any single criterion makes it undesirable.

Spans may overlap and need not cover the text: two readings of one clause
are both admissible. Repeated spans of the same stage type count once.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from enum import IntEnum
from pathlib import Path
from typing import Any, Callable, Iterable

from .errors import (
    DuplicateAnnotation,
    InvalidSpan,
    NarrativityMismatch,
    SchemaError,
    UnknownItem,
)


class StageType(IntEnum):
    """The five narrative stage types; integer codes are the wire format."""

    EQUILIBRIUM = 1
    DISRUPTION = 2
    RECOGNITION = 3
    ATTEMPT = 4
    NEW_EQUILIBRIUM = 5


STAGE_NAMES = {
    StageType.EQUILIBRIUM: "Equilibrium",
    StageType.DISRUPTION: "Disruption",
    StageType.RECOGNITION: "Recognition",
    StageType.ATTEMPT: "Attempt",
    StageType.NEW_EQUILIBRIUM: "New Equilibrium",
}

LIKERT3_LABELS = {1: "Disagree", 2: "Neutral", 3: "Agree"}
LIKERT5_LABELS = {
    1: "Strongly Disagree",
    2: "Disagree",
    3: "Neutral",
    4: "Agree",
    5: "Strongly Agree",
}

CRITERIA_FIELDS = ("logical", "rational", "complete_n")


def validate_likert3(value: int, name: str = "rating") -> int:
    if value not in (1, 2, 3):
        raise SchemaError(f"{name} must be 1, 2 or 3, got {value!r}")
    return value


def validate_likert5(value: int, name: str = "rating") -> int:
    if value not in (1, 2, 3, 4, 5):
        raise SchemaError(f"{name} must be in 1..5, got {value!r}")
    return value


@dataclass(frozen=True)
class StageSpan:
    """A [start, end) character range tagged with one stage type."""

    stage: StageType
    start: int
    end: int

    def __post_init__(self):
        if not isinstance(self.stage, StageType):
            object.__setattr__(self, "stage", StageType(self.stage))
        if self.start < 0 or self.start >= self.end:
            raise InvalidSpan(f"need 0 <= start < end, got [{self.start}, {self.end})")

    def check_bounds(self, text_length: int) -> None:
        if self.end > text_length:
            raise InvalidSpan(
                f"span end {self.end} exceeds text length {text_length}"
            )

    def to_payload(self) -> dict[str, int]:
        return {"stage": int(self.stage), "start": self.start, "end": self.end}

    @classmethod
    def from_payload(cls, payload: dict[str, Any]) -> "StageSpan":
        try:
            return cls(
                stage=StageType(int(payload["stage"])),
                start=int(payload["start"]),
                end=int(payload["end"]),
            )
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"malformed span: {exc}") from None


@dataclass(frozen=True)
class CriteriaScores:
    """The three 3-point criteria ratings for one retelling."""

    logical: int
    rational: int
    complete_n: int

    def __post_init__(self):
        for name in CRITERIA_FIELDS:
            validate_likert3(getattr(self, name), name)

    def to_payload(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in CRITERIA_FIELDS}

    @classmethod
    def from_payload(cls, payload: dict[str, Any]) -> "CriteriaScores":
        try:
            return cls(**{name: int(payload[name]) for name in CRITERIA_FIELDS})
        except KeyError as exc:
            raise SchemaError(f"missing criterion {exc}") from None


def min_lrc(criteria: CriteriaScores) -> int:
    """Overall quality: the minimum of the three criteria ratings."""
    return min(criteria.logical, criteria.rational, criteria.complete_n)


def narrativity_score(spans: Iterable[StageSpan]) -> int:
    """1-5 score: how many distinct stage types the spans cover, floored at 1."""
    distinct = {span.stage for span in spans}
    return max(1, len(distinct))


def annotated_text(premise: str, counterfactual: str, candidate: str) -> str:
    """The retold story as shown to annotators; spans index into this string."""
    return " ".join(part.strip() for part in (premise, counterfactual, candidate))


@dataclass(frozen=True)
class AnnotationRecord:
    """One annotator's spans plus criteria ratings for one retelling."""

    annotator_id: str
    item_id: str
    candidate_tag: str
    spans: tuple[StageSpan, ...]
    criteria: CriteriaScores
    narrativity: int
    timestamp: str
    record_id: str | None = None

    def __post_init__(self):
        validate_likert5(self.narrativity, "narrativity")

    @property
    def min_lrc(self) -> int:
        return min_lrc(self.criteria)

    @classmethod
    def create(
        cls,
        annotator_id: str,
        item_id: str,
        candidate_tag: str,
        spans: Iterable[StageSpan],
        criteria: CriteriaScores,
        timestamp: str | None = None,
    ) -> "AnnotationRecord":
        """Build a record with narrativity derived from the spans."""
        spans = tuple(spans)
        return cls(
            annotator_id=annotator_id,
            item_id=item_id,
            candidate_tag=candidate_tag,
            spans=spans,
            criteria=criteria,
            narrativity=narrativity_score(spans),
            timestamp=timestamp or _now_iso(),
        )

    def to_payload(self) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "annotator_id": self.annotator_id,
            "item_id": self.item_id,
            "candidate_tag": self.candidate_tag,
            "spans": [span.to_payload() for span in self.spans],
            "criteria": self.criteria.to_payload(),
            "narrativity": self.narrativity,
            "timestamp": self.timestamp,
        }
        if self.record_id is not None:
            payload["record_id"] = self.record_id
        return payload

    @classmethod
    def from_payload(cls, payload: dict[str, Any]) -> "AnnotationRecord":
        try:
            return cls(
                annotator_id=str(payload["annotator_id"]),
                item_id=str(payload["item_id"]),
                candidate_tag=str(payload["candidate_tag"]),
                spans=tuple(
                    StageSpan.from_payload(s) for s in payload.get("spans", [])
                ),
                criteria=CriteriaScores.from_payload(payload["criteria"]),
                narrativity=int(payload["narrativity"]),
                timestamp=str(payload.get("timestamp") or _now_iso()),
                record_id=payload.get("record_id"),
            )
        except KeyError as exc:
            raise SchemaError(f"missing field {exc}") from None


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class AnnotationStore:
    """Append-only annotation log backed by a single JSONL file.

    Writes are serialized by a lock; reads return immutable records. When a
    ``text_lookup`` is given, item existence and span bounds are validated
    against the annotated text it returns. Narrativity is always recomputed
    and must match the client-supplied value.
    """

    def __init__(
        self,
        path: str | Path | None = None,
        *,
        text_lookup: Callable[[str, str], str] | None = None,
    ):
        self._path = Path(path) if path is not None else None
        self._text_lookup = text_lookup
        self._lock = threading.Lock()
        self._records: list[AnnotationRecord] = []
        self._seen: set[tuple[str, str, str]] = set()
        if self._path is not None and self._path.exists():
            for line in self._path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                record = AnnotationRecord.from_payload(json.loads(line))
                self._records.append(record)
                self._seen.add(
                    (record.annotator_id, record.item_id, record.candidate_tag)
                )

    def __len__(self) -> int:
        return len(self._records)

    def attach(self, record: AnnotationRecord) -> str:
        """Validate and persist one record; returns its assigned id."""
        if self._text_lookup is not None:
            try:
                text = self._text_lookup(record.item_id, record.candidate_tag)
            except KeyError:
                raise UnknownItem(
                    f"no task for item '{record.item_id}' "
                    f"candidate '{record.candidate_tag}'"
                ) from None
            for span in record.spans:
                span.check_bounds(len(text))
        expected = narrativity_score(record.spans)
        if record.narrativity != expected:
            raise NarrativityMismatch(
                f"client narrativity {record.narrativity}, server computed {expected}"
            )
        with self._lock:
            key = (record.annotator_id, record.item_id, record.candidate_tag)
            if key in self._seen:
                raise DuplicateAnnotation(
                    f"annotator '{record.annotator_id}' already rated "
                    f"item '{record.item_id}' candidate '{record.candidate_tag}'"
                )
            record_id = f"ann-{len(self._records) + 1:06d}"
            stored = replace(record, record_id=record_id)
            if self._path is not None:
                with open(self._path, "a", encoding="utf-8") as handle:
                    handle.write(
                        json.dumps(stored.to_payload(), ensure_ascii=False) + "\n"
                    )
            self._records.append(stored)
            self._seen.add(key)
        return record_id

    def get(self, record_id: str) -> AnnotationRecord:
        for record in self._records:
            if record.record_id == record_id:
                return record
        raise KeyError(record_id)

    def records(self) -> tuple[AnnotationRecord, ...]:
        return tuple(self._records)

    def rated_keys(self, annotator_id: str) -> set[tuple[str, str]]:
        return {
            (r.item_id, r.candidate_tag)
            for r in self._records
            if r.annotator_id == annotator_id
        }

    def annotator_ids(self) -> list[str]:
        return sorted({r.annotator_id for r in self._records})


def attach_annotation(record: AnnotationRecord, store: AnnotationStore) -> str:
    """Persist a record after server-side validation; returns the stored id."""
    return store.attach(record)
