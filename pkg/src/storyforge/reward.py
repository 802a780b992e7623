"""Reward signals, group-relative advantages, and training-trace monitors.

Three reward kinds map onto judge criteria: R_O (overall, 1-3), R_O5
(overall on a 5-point scale) and R_N (narrativity, 1-5). A completion
longer than ``length_penalty_ratio`` times the original ending (counted in
whitespace tokens) has its reward floored at the scale minimum so verbose
outputs cannot game the signal.

Advantages follow the group-relative convention: each reward normalized
by its sibling group's mean and population standard deviation, with a
saturated (constant) group yielding all-zero advantages.

Trace monitors replay append-only step logs: the reward plateau detector
fires once a full window of steps stays within tolerance of the maximum
achievable reward, and the loss detector fires after a run of
per-step decreases smaller than a delta.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

from .corpus import StoryItem
from .errors import (
    BackendError,
    GroupTooSmall,
    ScaleMismatch,
    SchemaError,
    ScoreParseError,
)
from .judge import (
    JudgeBackend,
    JudgePrompt,
    JudgeVerdict,
    build_prompt,
    judge_one,
)

REWARD_KINDS: dict[str, tuple[str, tuple[int, int]]] = {
    "R_O": ("overall", (1, 3)),
    "R_O5": ("overall5", (1, 5)),
    "R_N": ("narrativity", (1, 5)),
}


@dataclass(frozen=True)
class RewardSpec:
    """Which judge criterion backs the reward and how length abuse is penalized."""

    kind: str
    length_penalty_ratio: float = 3.0
    penalty_value: float | None = None

    def __post_init__(self):
        if self.kind not in REWARD_KINDS:
            raise SchemaError(f"unknown reward kind '{self.kind}'")
        if self.length_penalty_ratio <= 0:
            raise SchemaError("length_penalty_ratio must be positive")

    @property
    def criterion(self) -> str:
        return REWARD_KINDS[self.kind][0]

    @property
    def scale(self) -> tuple[int, int]:
        return REWARD_KINDS[self.kind][1]

    @property
    def penalty(self) -> float:
        return float(self.scale[0]) if self.penalty_value is None else self.penalty_value

    @property
    def max_reward(self) -> float:
        return float(self.scale[1])


def token_length(text: str) -> int:
    return len(text.split())


def compute_reward(
    spec: RewardSpec, item: StoryItem, completion: str, verdict: JudgeVerdict
) -> tuple[float, bool]:
    """Judge score as reward, floored to the penalty for over-long completions."""
    if verdict.criterion != spec.criterion:
        raise ScaleMismatch(
            f"verdict criterion '{verdict.criterion}' does not match "
            f"reward kind '{spec.kind}' (expects '{spec.criterion}')"
        )
    lo, hi = spec.scale
    if not lo <= verdict.score <= hi:
        raise ScaleMismatch(f"score {verdict.score} outside scale [{lo}, {hi}]")
    limit = spec.length_penalty_ratio * token_length(item.original_ending)
    if token_length(completion) > limit:
        return spec.penalty, True
    return float(verdict.score), False


def group_advantages(rewards: Sequence[float]) -> list[float]:
    """(r - mean) / population std per reward; all zeros when the group is flat."""
    if len(rewards) < 2:
        raise GroupTooSmall(f"need at least 2 rewards, got {len(rewards)}")
    mean = sum(rewards) / len(rewards)
    variance = sum((r - mean) ** 2 for r in rewards) / len(rewards)
    std = math.sqrt(variance)
    if std == 0.0:
        return [0.0] * len(rewards)
    return [(r - mean) / std for r in rewards]


@dataclass(frozen=True)
class RewardGroup:
    """Sibling completions of one item with rewards and normalized advantages."""

    item_id: str
    completions: tuple[str, ...]
    rewards: tuple[float, ...]
    penalized: tuple[bool, ...]
    advantages: tuple[float, ...]
    error: str | None = None

    def __post_init__(self):
        if self.error is None and not (
            len(self.completions) == len(self.rewards) == len(self.advantages)
        ):
            raise SchemaError("completions, rewards and advantages must align")

    def to_payload(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "completions": list(self.completions),
            "rewards": list(self.rewards),
            "penalized": list(self.penalized),
            "advantages": list(self.advantages),
            "error": self.error,
        }


@dataclass(frozen=True)
class TraceRow:
    """One logged step: either a reward summary or a loss value."""

    step: int
    mean_reward: float | None = None
    std_reward: float | None = None
    loss: float | None = None

    def __post_init__(self):
        has_reward = self.mean_reward is not None
        has_loss = self.loss is not None
        if has_reward == has_loss:
            raise SchemaError(
                f"step {self.step}: row must carry either reward stats or a loss"
            )

    def to_payload(self) -> dict[str, Any]:
        if self.mean_reward is not None:
            return {
                "step": self.step,
                "mean_reward": self.mean_reward,
                "std_reward": self.std_reward,
            }
        return {"step": self.step, "loss": self.loss}

    @classmethod
    def from_payload(cls, payload: dict[str, Any]) -> "TraceRow":
        if "loss" in payload:
            return cls(step=int(payload["step"]), loss=float(payload["loss"]))
        return cls(
            step=int(payload["step"]),
            mean_reward=float(payload["mean_reward"]),
            std_reward=float(payload.get("std_reward", 0.0)),
        )


@dataclass(frozen=True)
class TrainingTrace:
    rows: tuple[TraceRow, ...] = ()

    def __post_init__(self):
        steps = [row.step for row in self.rows]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise SchemaError("trace steps must be strictly increasing")

    def reward_rows(self) -> tuple[TraceRow, ...]:
        return tuple(r for r in self.rows if r.mean_reward is not None)

    def loss_rows(self) -> tuple[TraceRow, ...]:
        return tuple(r for r in self.rows if r.loss is not None)

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "TrainingTrace":
        rows = []
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                payload = json.loads(line)
                if "_meta" in payload:
                    continue
                rows.append(TraceRow.from_payload(payload))
        return cls(rows=tuple(rows))


@dataclass(frozen=True)
class PlateauConfig:
    window: int = 200
    tolerance: float = 0.1
    max_reward: float = 3.0

    def __post_init__(self):
        if self.window < 1:
            raise SchemaError("window must be >= 1")
        if self.tolerance <= 0:
            raise SchemaError("tolerance must be > 0")


def detect_reward_plateau(trace: TrainingTrace, cfg: PlateauConfig) -> int | None:
    """Earliest step closing a full window with mean reward near the maximum."""
    threshold = cfg.max_reward - cfg.tolerance
    run = 0
    for row in trace.reward_rows():
        run = run + 1 if row.mean_reward >= threshold else 0
        if run >= cfg.window:
            return row.step
    return None


def detect_sft_convergence(
    trace: TrainingTrace, delta: float = 0.01, run: int = 3
) -> int | None:
    """Earliest step ending `run` consecutive loss decreases smaller than `delta`.

    An increase counts as a decrease smaller than delta.
    """
    rows = trace.loss_rows()
    streak = 0
    for prev, curr in zip(rows, rows[1:]):
        streak = streak + 1 if prev.loss - curr.loss < delta else 0
        if streak >= run:
            return curr.step
    return None


class TraceLog:
    """Append-only step log, optionally persisted to JSONL for offline replay."""

    def __init__(self, path: str | Path | None = None):
        self._path = Path(path) if path is not None else None
        self._rows: list[TraceRow] = []
        self._lock = threading.Lock()
        if self._path is not None and self._path.exists():
            self._rows = list(TrainingTrace.from_jsonl(self._path).rows)

    def append_reward(self, mean_reward: float, std_reward: float) -> TraceRow:
        with self._lock:
            step = self._rows[-1].step + 1 if self._rows else 1
            row = TraceRow(step=step, mean_reward=mean_reward, std_reward=std_reward)
            self._persist(row)
        return row

    def append_loss(self, loss: float) -> TraceRow:
        with self._lock:
            step = self._rows[-1].step + 1 if self._rows else 1
            row = TraceRow(step=step, loss=loss)
            self._persist(row)
        return row

    def _persist(self, row: TraceRow) -> None:
        self._rows.append(row)
        if self._path is not None:
            with open(self._path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(row.to_payload()) + "\n")

    def trace(self) -> TrainingTrace:
        return TrainingTrace(rows=tuple(self._rows))


@dataclass(frozen=True)
class CompletionGroup:
    """Input to reward_batch: one item and its sibling completions."""

    item: StoryItem
    completions: tuple[str, ...]


def reward_batch(
    spec: RewardSpec,
    groups: Iterable[CompletionGroup],
    backend: JudgeBackend,
    *,
    format: str = "score_only",
    retries: int = 2,
    trace: TraceLog | None = None,
    judge_fn=None,
) -> list[RewardGroup]:
    """Judge every completion, fill rewards and advantages, log trace rows.

    ``judge_fn(backend, prompt, retries)`` may be injected to route calls
    through a verdict cache. A group whose judging fails is returned with
    its ``error`` set rather than dropped, so callers can account for it.
    """
    judge = judge_fn or judge_one
    results: list[RewardGroup] = []
    for group in groups:
        if len(group.completions) < 2:
            raise GroupTooSmall(
                f"item {group.item.id}: need at least 2 completions, "
                f"got {len(group.completions)}"
            )
        rewards: list[float] = []
        penalized: list[bool] = []
        failure: str | None = None
        for completion in group.completions:
            prompt: JudgePrompt = build_prompt(
                group.item, completion, spec.criterion, format
            )
            try:
                verdict = judge(backend, prompt, retries)
            except (ScoreParseError, BackendError) as exc:
                failure = f"completion {len(rewards)}: {exc}"
                break
            reward, was_penalized = compute_reward(
                spec, group.item, completion, verdict
            )
            rewards.append(reward)
            penalized.append(was_penalized)
        if failure is not None:
            results.append(
                RewardGroup(
                    item_id=group.item.id,
                    completions=group.completions,
                    rewards=(),
                    penalized=(),
                    advantages=(),
                    error=failure,
                )
            )
            continue
        advantages = group_advantages(rewards)
        if trace is not None:
            mean = sum(rewards) / len(rewards)
            std = math.sqrt(sum((r - mean) ** 2 for r in rewards) / len(rewards))
            trace.append_reward(mean, std)
        results.append(
            RewardGroup(
                item_id=group.item.id,
                completions=group.completions,
                rewards=tuple(rewards),
                penalized=tuple(penalized),
                advantages=tuple(advantages),
            )
        )
    return results
