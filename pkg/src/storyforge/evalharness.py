"""End-to-end evaluation over a split: judge criteria plus overlap metrics.

One row per reteller: macro-averaged logical/rational/complete_n scores,
the mean of per-item minimums (never the minimum of column means),
narrativity, and nearest-reference BLEU-4/ROUGE-L. For the human-reference
row each of an item's references is judged independently and the per-item
value is the mean over references; the per-item minimum is taken per
reference before averaging, since the minimum is defined per story.

Verdicts are cached by (prompt hash, backend id) so expensive judge passes
are resumable and reruns from a warm cache are byte-identical.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from .corpus import StoryItem
from .errors import BackendError, MissingGeneration, ScoreParseError, SchemaError
from .judge import JudgeBackend, JudgePrompt, JudgeVerdict, build_prompt, judge_one
from .similarity import nearest_reference_similarity

EVAL_CRITERIA = ("logical", "rational", "complete_n")

HUMAN_ROW_NOTE = (
    "human-reference row averages per-reference minimums "
    "(min per story, then mean), not the minimum of averaged criteria"
)


class VerdictCache:
    """Verdicts keyed by (prompt hash, backend id), with JSONL persistence."""

    def __init__(self, path: str | Path | None = None):
        self._path = Path(path) if path is not None else None
        self._entries: dict[tuple[str, str], JudgeVerdict] = {}
        self._lock = threading.Lock()
        self.backend_calls = 0
        if self._path is not None and self._path.exists():
            for line in self._path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                verdict = JudgeVerdict.from_payload(json.loads(line))
                self._entries[(verdict.prompt_hash, verdict.backend_id)] = verdict

    def __len__(self) -> int:
        return len(self._entries)

    def judge(
        self, backend: JudgeBackend, prompt: JudgePrompt, retries: int = 2
    ) -> JudgeVerdict:
        key = (prompt.prompt_hash, backend.backend_id)
        with self._lock:
            cached = self._entries.get(key)
        if cached is not None:
            return cached
        verdict = judge_one(backend, prompt, retries)
        with self._lock:
            self.backend_calls += 1
            self._entries[key] = verdict
            if self._path is not None:
                with open(self._path, "a", encoding="utf-8") as handle:
                    handle.write(
                        json.dumps(verdict.to_payload(), ensure_ascii=False) + "\n"
                    )
        return verdict


@dataclass(frozen=True)
class EvalRow:
    reteller: str
    logical: float
    rational: float
    complete_n: float
    min_lrc: float
    narrativity: float
    bleu4: float
    rougeL: float
    n: int

    def to_payload(self) -> dict[str, Any]:
        return {
            "reteller": self.reteller,
            "logical": self.logical,
            "rational": self.rational,
            "complete_n": self.complete_n,
            "min_lrc": self.min_lrc,
            "narrativity": self.narrativity,
            "bleu4": self.bleu4,
            "rougeL": self.rougeL,
            "n": self.n,
        }


@dataclass(frozen=True)
class EvalResult:
    row: EvalRow
    failures: dict[str, str]


def _judge_candidate(
    backend: JudgeBackend,
    item: StoryItem,
    candidate: str,
    *,
    cache: VerdictCache | None,
    format: str,
    retries: int,
) -> dict[str, int]:
    """Scores for the three criteria plus narrativity, one call per criterion."""
    scores: dict[str, int] = {}
    for criterion in EVAL_CRITERIA + ("narrativity",):
        prompt = build_prompt(item, candidate, criterion, format)
        if cache is not None:
            verdict = cache.judge(backend, prompt, retries)
        else:
            verdict = judge_one(backend, prompt, retries)
        scores[criterion] = verdict.score
    return scores


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def evaluate_reteller(
    reteller: str,
    generations: Mapping[str, str],
    split: Sequence[StoryItem],
    backend: JudgeBackend,
    *,
    cache: VerdictCache | None = None,
    format: str = "score_only",
    retries: int = 2,
) -> EvalResult:
    """Score one reteller's generation per item and aggregate into a row."""
    missing = [item.id for item in split if item.id not in generations]
    if missing:
        raise MissingGeneration(
            f"no generation for {len(missing)} item(s), first: {missing[0]}"
        )
    columns: dict[str, list[float]] = {
        "logical": [],
        "rational": [],
        "complete_n": [],
        "min_lrc": [],
        "narrativity": [],
        "bleu4": [],
        "rougeL": [],
    }
    failures: dict[str, str] = {}
    for item in sorted(split, key=lambda i: i.id):
        if not item.edited_endings:
            raise SchemaError(f"item {item.id} has no references for similarity")
        candidate = generations[item.id]
        try:
            scores = _judge_candidate(
                backend, item, candidate, cache=cache, format=format, retries=retries
            )
        except (ScoreParseError, BackendError) as exc:
            failures[item.id] = str(exc)
            continue
        for criterion in EVAL_CRITERIA + ("narrativity",):
            columns[criterion].append(float(scores[criterion]))
        columns["min_lrc"].append(
            float(min(scores[c] for c in EVAL_CRITERIA))
        )
        refs = list(item.edited_endings)
        columns["bleu4"].append(
            nearest_reference_similarity(candidate, refs, "bleu4").value
        )
        columns["rougeL"].append(
            nearest_reference_similarity(candidate, refs, "rougeL").value
        )
    n = len(columns["min_lrc"])
    if n == 0:
        raise MissingGeneration("every item failed judging; no row to report")
    row = EvalRow(
        reteller=reteller,
        logical=_mean(columns["logical"]),
        rational=_mean(columns["rational"]),
        complete_n=_mean(columns["complete_n"]),
        min_lrc=_mean(columns["min_lrc"]),
        narrativity=_mean(columns["narrativity"]),
        bleu4=_mean(columns["bleu4"]),
        rougeL=_mean(columns["rougeL"]),
        n=n,
    )
    return EvalResult(row=row, failures=failures)


def evaluate_references(
    split: Sequence[StoryItem],
    backend: JudgeBackend,
    *,
    reteller: str = "human references",
    cache: VerdictCache | None = None,
    format: str = "score_only",
    retries: int = 2,
) -> EvalResult:
    """Judge each of the 3 references per item and average them per item."""
    columns: dict[str, list[float]] = {
        "logical": [],
        "rational": [],
        "complete_n": [],
        "min_lrc": [],
        "narrativity": [],
        "bleu4": [],
        "rougeL": [],
    }
    failures: dict[str, str] = {}
    for item in sorted(split, key=lambda i: i.id):
        if len(item.edited_endings) != 3:
            raise SchemaError(
                f"item {item.id}: reference evaluation needs 3 references, "
                f"got {len(item.edited_endings)}"
            )
        per_ref: dict[str, list[float]] = {
            "logical": [],
            "rational": [],
            "complete_n": [],
            "min_lrc": [],
            "narrativity": [],
            "bleu4": [],
            "rougeL": [],
        }
        refs = list(item.edited_endings)
        try:
            for reference in refs:
                scores = _judge_candidate(
                    backend,
                    item,
                    reference,
                    cache=cache,
                    format=format,
                    retries=retries,
                )
                for criterion in EVAL_CRITERIA + ("narrativity",):
                    per_ref[criterion].append(float(scores[criterion]))
                per_ref["min_lrc"].append(
                    float(min(scores[c] for c in EVAL_CRITERIA))
                )
                per_ref["bleu4"].append(
                    nearest_reference_similarity(reference, refs, "bleu4").value
                )
                per_ref["rougeL"].append(
                    nearest_reference_similarity(reference, refs, "rougeL").value
                )
        except (ScoreParseError, BackendError) as exc:
            failures[item.id] = str(exc)
            continue
        for key, values in per_ref.items():
            columns[key].append(_mean(values))
    n = len(columns["min_lrc"])
    if n == 0:
        raise MissingGeneration("every item failed judging; no row to report")
    row = EvalRow(
        reteller=reteller,
        logical=_mean(columns["logical"]),
        rational=_mean(columns["rational"]),
        complete_n=_mean(columns["complete_n"]),
        min_lrc=_mean(columns["min_lrc"]),
        narrativity=_mean(columns["narrativity"]),
        bleu4=_mean(columns["bleu4"]),
        rougeL=_mean(columns["rougeL"]),
        n=n,
    )
    return EvalResult(row=row, failures=failures)
