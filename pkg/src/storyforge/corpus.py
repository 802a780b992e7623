"""Ingest and serve counterfactual-retelling story data.

Records live in JSON Lines files, one story per line, with snake_case
fields: ``id``, ``premise``, ``initial``, ``original_ending``,
``counterfactual``, ``edited_endings``. Alternative field names used by
dataset releases are normalized at ingest through ``FIELD_ALIASES`` (or a
caller-supplied mapping). Loaders are pure functions returning immutable
values, safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, TypeVar

from .errors import SchemaError

T = TypeVar("T")

SPLIT_NAMES = ("train_supervised", "train_unsupervised", "validation", "test")

# References per item expected for each declared split.
SPLIT_REFERENCE_COUNTS = {
    "train_supervised": 1,
    "train_unsupervised": 0,
    "validation": 3,
    "test": 3,
}

# Source field name -> canonical field name. Extend via the reader config.
FIELD_ALIASES = {
    "story_id": "id",
    "edited_ending": "edited_endings",
    "original": "original_ending",
    "counterfactual_event": "counterfactual",
    "initial_event": "initial",
}

_REQUIRED_TEXT_FIELDS = ("premise", "initial", "original_ending", "counterfactual")


@dataclass(frozen=True)
class StoryItem:
    """One story record: premise, two openings, original ending, references."""

    id: str
    premise: str
    initial: str
    original_ending: str
    counterfactual: str
    edited_endings: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "edited_endings", tuple(self.edited_endings))
        for name in ("id",) + _REQUIRED_TEXT_FIELDS:
            if not getattr(self, name).strip():
                raise SchemaError(f"field '{name}' is empty")
        if len(self.edited_endings) not in (0, 1, 3):
            raise SchemaError(
                f"expected 0, 1 or 3 edited endings, got {len(self.edited_endings)}"
            )
        if any(not e.strip() for e in self.edited_endings):
            raise SchemaError("edited ending is empty")

    def to_payload(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "premise": self.premise,
            "initial": self.initial,
            "original_ending": self.original_ending,
            "counterfactual": self.counterfactual,
            "edited_endings": list(self.edited_endings),
        }


@dataclass(frozen=True)
class Candidate:
    """One retelling of an item, tagged by where it came from."""

    source_tag: str
    text: str

    def to_payload(self) -> dict[str, str]:
        return {"source_tag": self.source_tag, "text": self.text}


@dataclass(frozen=True)
class GenerationSet:
    """All candidate retellings collected for one item."""

    item_id: str
    candidates: tuple[Candidate, ...]

    def __post_init__(self):
        if not self.candidates:
            raise SchemaError(f"item {self.item_id}: no candidates")
        tags = [c.source_tag for c in self.candidates]
        if len(set(tags)) != len(tags):
            raise SchemaError(f"item {self.item_id}: duplicate source tags {tags}")

    def texts(self) -> tuple[str, ...]:
        return tuple(c.text for c in self.candidates)


@dataclass(frozen=True)
class SplitManifest:
    split_name: str
    path: str
    count: int

    def to_payload(self) -> dict[str, Any]:
        return {"split_name": self.split_name, "path": self.path, "count": self.count}


def item_from_payload(
    payload: dict[str, Any],
    *,
    line_no: int | None = None,
    field_aliases: dict[str, str] | None = None,
    default_id: str | None = None,
) -> StoryItem:
    """Build a StoryItem from one parsed JSON object, normalizing field names."""
    aliases = FIELD_ALIASES if field_aliases is None else field_aliases
    data: dict[str, Any] = {}
    for key, value in payload.items():
        data[aliases.get(key, key)] = value

    missing = [name for name in _REQUIRED_TEXT_FIELDS if name not in data]
    if missing:
        raise SchemaError(f"missing field(s) {', '.join(missing)}", line_no)

    endings = data.get("edited_endings", [])
    if isinstance(endings, str):
        endings = [endings]
    if not isinstance(endings, list) or any(not isinstance(e, str) for e in endings):
        raise SchemaError("edited_endings must be a list of strings", line_no)

    item_id = data.get("id") or default_id
    if not item_id:
        raise SchemaError("missing field(s) id", line_no)

    try:
        return StoryItem(
            id=str(item_id).strip(),
            premise=str(data["premise"]).strip(),
            initial=str(data["initial"]).strip(),
            original_ending=str(data["original_ending"]).strip(),
            counterfactual=str(data["counterfactual"]).strip(),
            edited_endings=tuple(e.strip() for e in endings),
        )
    except SchemaError as exc:
        raise SchemaError(str(exc), line_no) from None


def _iter_lines(path: str | Path) -> Iterator[tuple[int, str]]:
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            stripped = line.strip()
            if stripped:
                yield line_no, stripped


def _parse_line(
    line_no: int,
    raw: str,
    split_name: str | None,
    field_aliases: dict[str, str] | None,
) -> StoryItem:
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", line_no) from None
    if isinstance(payload, dict) and "_meta" in payload:
        raise SchemaError("metadata line where a record was expected", line_no)
    if not isinstance(payload, dict):
        raise SchemaError("record is not a JSON object", line_no)
    item = item_from_payload(
        payload,
        line_no=line_no,
        field_aliases=field_aliases,
        default_id=f"item-{line_no:06d}",
    )
    if split_name is not None:
        expected = SPLIT_REFERENCE_COUNTS[split_name]
        if len(item.edited_endings) != expected:
            raise SchemaError(
                f"split '{split_name}' expects {expected} edited endings, "
                f"got {len(item.edited_endings)}",
                line_no,
            )
    return item


def load_split(
    path: str | Path,
    split_name: str,
    *,
    field_aliases: dict[str, str] | None = None,
) -> tuple[StoryItem, ...]:
    """Load one split strictly: any malformed line aborts with SchemaError.

    Items come back in exact file order. Meta lines (objects carrying a
    ``_meta`` key) are skipped.
    """
    if split_name not in SPLIT_NAMES:
        raise SchemaError(f"unknown split '{split_name}'")
    items = []
    for line_no, raw in _iter_lines(path):
        if _is_meta_line(raw):
            continue
        items.append(_parse_line(line_no, raw, split_name, field_aliases))
    return tuple(items)


def scan_split(
    path: str | Path,
    split_name: str,
    *,
    field_aliases: dict[str, str] | None = None,
) -> tuple[tuple[StoryItem, ...], tuple[SchemaError, ...]]:
    """Lenient loader: skip malformed lines, returning them alongside the items."""
    if split_name not in SPLIT_NAMES:
        raise SchemaError(f"unknown split '{split_name}'")
    items: list[StoryItem] = []
    problems: list[SchemaError] = []
    for line_no, raw in _iter_lines(path):
        if _is_meta_line(raw):
            continue
        try:
            items.append(_parse_line(line_no, raw, split_name, field_aliases))
        except SchemaError as exc:
            problems.append(exc)
    return tuple(items), tuple(problems)


def _is_meta_line(raw: str) -> bool:
    if not raw.startswith("{"):
        return False
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError:
        return False
    return isinstance(payload, dict) and "_meta" in payload


def make_manifest(path: str | Path, split_name: str) -> SplitManifest:
    items = load_split(path, split_name)
    return SplitManifest(split_name=split_name, path=str(path), count=len(items))


def take_prefix(items: Iterable[T], n: int) -> tuple[T, ...]:
    """First n items in their original order; n larger than the list clamps."""
    if n < 0:
        raise ValueError(f"prefix length must be >= 0, got {n}")
    out: list[T] = []
    for item in items:
        if len(out) >= n:
            break
        out.append(item)
    return tuple(out)


def dump_items(items: Iterable[StoryItem], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for item in items:
            handle.write(json.dumps(item.to_payload(), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class TaskItem:
    """A story together with the candidate retellings to be rated or judged."""

    item: StoryItem
    candidates: tuple[Candidate, ...]

    def candidate_text(self, source_tag: str) -> str:
        for candidate in self.candidates:
            if candidate.source_tag == source_tag:
                return candidate.text
        raise KeyError(source_tag)

    def to_payload(self) -> dict[str, Any]:
        payload = self.item.to_payload()
        payload["candidates"] = [c.to_payload() for c in self.candidates]
        return payload


def _candidates_from_payload(
    raw: Any, line_no: int | None, key: str
) -> tuple[Candidate, ...]:
    if not isinstance(raw, list) or not raw:
        raise SchemaError(f"'{key}' must be a non-empty list", line_no)
    out = []
    for entry in raw:
        if not isinstance(entry, dict) or "source_tag" not in entry or "text" not in entry:
            raise SchemaError(f"'{key}' entries need source_tag and text", line_no)
        out.append(Candidate(source_tag=str(entry["source_tag"]), text=str(entry["text"])))
    return tuple(out)


def load_tasks(
    path: str | Path, *, field_aliases: dict[str, str] | None = None
) -> tuple[TaskItem, ...]:
    """Load a task file: story fields plus a ``candidates`` list per line."""
    tasks = []
    for line_no, raw in _iter_lines(path):
        if _is_meta_line(raw):
            continue
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc.msg}", line_no) from None
        item = item_from_payload(
            payload,
            line_no=line_no,
            field_aliases=field_aliases,
            default_id=f"item-{line_no:06d}",
        )
        candidates = _candidates_from_payload(
            payload.get("candidates"), line_no, "candidates"
        )
        gen_set = GenerationSet(item_id=item.id, candidates=candidates)
        tasks.append(TaskItem(item=item, candidates=gen_set.candidates))
    return tuple(tasks)


def load_curation_inputs(
    path: str | Path,
    *,
    expected_generations: int | None = None,
    field_aliases: dict[str, str] | None = None,
) -> tuple[tuple[StoryItem, GenerationSet], ...]:
    """Load curation input: story fields plus a ``generations`` list per line."""
    out = []
    for line_no, raw in _iter_lines(path):
        if _is_meta_line(raw):
            continue
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc.msg}", line_no) from None
        item = item_from_payload(
            payload,
            line_no=line_no,
            field_aliases=field_aliases,
            default_id=f"item-{line_no:06d}",
        )
        candidates = _candidates_from_payload(
            payload.get("generations"), line_no, "generations"
        )
        if expected_generations is not None and len(candidates) != expected_generations:
            raise SchemaError(
                f"expected {expected_generations} generations, got {len(candidates)}",
                line_no,
            )
        out.append((item, GenerationSet(item_id=item.id, candidates=candidates)))
    return tuple(out)
