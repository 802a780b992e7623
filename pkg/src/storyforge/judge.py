"""Judge orchestration: prompt construction, backends, and score parsing.

Each criterion is scored in its own backend call. Two output formats are
supported: ``score_only`` (the score comes first, generation can stop
immediately after it) and ``reason_then_score`` (free-form reasoning ends
with the score). The parser takes the first in-scale integer for the
former and the last for the latter, tolerating shapes like "Score: 3",
"3/3" or "[3]".

Prompts embed the stage definitions and rubrics from a versioned
principle file whose hash travels with every verdict-producing artifact,
so scores stay attributable to the exact prompt wording that produced
them.
"""

from __future__ import annotations

import hashlib
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from threading import Lock
from typing import Any, Protocol, Sequence

import httpx

from .corpus import StoryItem
from .errors import BackendError, ScoreParseError, UnknownCriterion

PRINCIPLES_VERSION = "todorov_v1"

CRITERION_SCALES: dict[str, tuple[int, int]] = {
    "logical": (1, 3),
    "rational": (1, 3),
    "complete_n": (1, 3),
    "overall": (1, 3),
    "overall5": (1, 5),
    "narrativity": (1, 5),
}

FORMATS = ("score_only", "reason_then_score")

# The overall5 rubric is the overall rubric on a finer scale.
_RUBRIC_KEYS = {"overall5": "overall"}

SCORE_FIRST_INSTRUCTION = (
    "Respond with the score first: output a single integer between {lo} and {hi} "
    "as the very first token of your reply. Any text after the integer is ignored."
)
REASON_FIRST_INSTRUCTION = (
    "Explain your reasoning, then finish with a final line of the form "
    "'Score: N' where N is a single integer between {lo} and {hi}."
)
RETRY_SUFFIX = "\n\nOutput only the integer."

_INT_TOKEN = re.compile(r"(?<!\d)\d+(?!\d)")


def principles_text(version: str = PRINCIPLES_VERSION) -> str:
    return (
        resources.files("storyforge.principles")
        .joinpath(f"{version}.md")
        .read_text(encoding="utf-8")
    )


def principles_hash(version: str = PRINCIPLES_VERSION) -> str:
    return hashlib.sha256(principles_text(version).encode("utf-8")).hexdigest()


@lru_cache(maxsize=None)
def _rubrics() -> dict[str, str]:
    """Rubric name -> unwrapped rubric sentence, parsed from the principle file."""
    rubrics: dict[str, str] = {}
    current: str | None = None
    for line in principles_text().splitlines():
        stripped = line.strip()
        if stripped.startswith("- ") and ":" in stripped:
            current = stripped[2:].split(":", 1)[0]
            rubrics[current] = stripped[2:]
        elif current and line.startswith("  ") and stripped:
            rubrics[current] += " " + stripped
        else:
            current = None
    return rubrics


def _rubric_line(criterion: str) -> str:
    key = _RUBRIC_KEYS.get(criterion, criterion)
    try:
        return _rubrics()[key]
    except KeyError:
        raise UnknownCriterion(f"no rubric for '{criterion}'") from None


@dataclass(frozen=True)
class JudgePrompt:
    criterion: str
    format: str
    scale: tuple[int, int]
    rendered_text: str

    @property
    def prompt_hash(self) -> str:
        return hashlib.sha256(self.rendered_text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class JudgeVerdict:
    criterion: str
    score: int
    rationale: str | None
    raw_response: str
    backend_id: str
    latency: float
    prompt_hash: str

    def to_payload(self) -> dict[str, Any]:
        # Latency is intentionally left out: artifacts must be byte-stable
        # across reruns.
        return {
            "criterion": self.criterion,
            "score": self.score,
            "rationale": self.rationale,
            "raw_response": self.raw_response,
            "backend_id": self.backend_id,
            "prompt_hash": self.prompt_hash,
        }

    @classmethod
    def from_payload(cls, payload: dict[str, Any]) -> "JudgeVerdict":
        return cls(
            criterion=payload["criterion"],
            score=int(payload["score"]),
            rationale=payload.get("rationale"),
            raw_response=payload.get("raw_response", ""),
            backend_id=payload["backend_id"],
            latency=0.0,
            prompt_hash=payload["prompt_hash"],
        )


def build_prompt(
    item: StoryItem, candidate: str, criterion: str, format: str = "score_only"
) -> JudgePrompt:
    """Render the full scoring prompt; a pure function of its arguments."""
    if criterion not in CRITERION_SCALES:
        raise UnknownCriterion(f"unknown criterion '{criterion}'")
    if format not in FORMATS:
        raise ValueError(f"unknown format '{format}'")
    if not candidate.strip():
        raise ValueError("candidate text is empty")
    lo, hi = CRITERION_SCALES[criterion]
    instruction = (
        SCORE_FIRST_INSTRUCTION if format == "score_only" else REASON_FIRST_INSTRUCTION
    ).format(lo=lo, hi=hi)
    rendered = "\n".join(
        [
            "You are scoring a counterfactual story retelling against",
            "narrative-equilibrium principles.",
            "",
            principles_text().strip(),
            "",
            "Story under evaluation:",
            f"Premise: {item.premise}",
            f"Initial event (replaced by the counterfactual): {item.initial}",
            f"Original ending: {item.original_ending}",
            f"Counterfactual event: {item.counterfactual}",
            f"Candidate retelling: {candidate}",
            "",
            f"Criterion to score: {_rubric_line(criterion)}",
            f"Give an integer between {lo} and {hi}, where {hi} is best.",
            "",
            instruction,
        ]
    )
    return JudgePrompt(
        criterion=criterion, format=format, scale=(lo, hi), rendered_text=rendered
    )


def parse_score(
    text: str, scale: tuple[int, int], format: str
) -> tuple[int, str | None]:
    """Extract (score, rationale) from a judge response.

    score_only: first in-scale integer, no rationale. reason_then_score:
    last in-scale integer, with everything before it as the rationale.
    """
    lo, hi = scale
    matches = [m for m in _INT_TOKEN.finditer(text) if lo <= int(m.group()) <= hi]
    if not matches:
        raise ScoreParseError(
            f"no integer in [{lo}, {hi}] found in response", raw_response=text
        )
    if format == "score_only":
        return int(matches[0].group()), None
    last = matches[-1]
    rationale = re.sub(r"(?i)\bscore\s*[:=]?\s*$", "", text[: last.start()]).strip()
    return int(last.group()), rationale


class JudgeBackend(Protocol):
    """Completion backend; implementations must be safe for concurrent calls."""

    backend_id: str

    def complete(
        self,
        prompt: str,
        stop_condition: str | None = None,
        max_tokens: int = 512,
    ) -> str: ...


_SCALE_IN_PROMPT = re.compile(r"between (\d+) and (\d+)")


class MockJudgeBackend:
    """Deterministic test backend: the score is a fixed function of the prompt hash.

    Tracks call and token accounting so tests can assert call counts and
    token budgets.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.backend_id = f"mock:{seed}"
        self.n_calls = 0
        self.tokens_used = 0
        self.tokens_by_call: list[int] = []
        self._lock = Lock()

    def _score_for(self, prompt: str) -> int:
        scales = _SCALE_IN_PROMPT.findall(prompt)
        lo, hi = (int(scales[-1][0]), int(scales[-1][1])) if scales else (1, 3)
        digest = hashlib.sha256(f"{self.seed}:{prompt}".encode("utf-8")).hexdigest()
        return lo + int(digest, 16) % (hi - lo + 1)

    def complete(
        self,
        prompt: str,
        stop_condition: str | None = None,
        max_tokens: int = 512,
    ) -> str:
        score = self._score_for(prompt)
        if "Respond with the score first" in prompt or RETRY_SUFFIX.strip() in prompt:
            text = f"{score} the retelling keeps a connected arc."
        else:
            text = (
                "Each stage of the candidate was weighed against the original "
                f"arc and the counterfactual event. Score: {score}"
            )
        if stop_condition:
            text = text.split(stop_condition)[0]
        tokens = text.split()
        if len(tokens) > max_tokens:
            text = " ".join(tokens[:max_tokens])
            tokens = tokens[:max_tokens]
        with self._lock:
            self.n_calls += 1
            self.tokens_used += len(tokens)
            self.tokens_by_call.append(len(tokens))
        return text


class HttpChatBackend:
    """Chat-completion-style HTTP backend with retries.

    Sends ``POST {base_url}/chat/completions`` with a single user message;
    the API key is read from the configured environment variable at call
    time.
    """

    def __init__(
        self,
        name: str,
        base_url: str,
        model: str,
        *,
        api_key_env: str = "JUDGE_API_KEY",
        timeout: float = 30.0,
        retries: int = 2,
        client: httpx.Client | None = None,
    ):
        self.name = name
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.retries = retries
        self.backend_id = f"{name}:{model}"
        self._client = client or httpx.Client(timeout=timeout)

    def complete(
        self,
        prompt: str,
        stop_condition: str | None = None,
        max_tokens: int = 512,
    ) -> str:
        import os

        headers = {}
        api_key = os.environ.get(self.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        body: dict[str, Any] = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": max_tokens,
            "temperature": 0,
        }
        if stop_condition:
            body["stop"] = [stop_condition]
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                response = self._client.post(
                    f"{self.base_url}/chat/completions", json=body, headers=headers
                )
                response.raise_for_status()
                payload = response.json()
                return payload["choices"][0]["message"]["content"]
            except (httpx.HTTPError, ValueError, KeyError, IndexError, TypeError) as exc:
                last_error = exc
                if attempt < self.retries:
                    time.sleep(min(2.0, 0.1 * 2**attempt))
        raise BackendError(
            f"backend '{self.backend_id}' failed after {self.retries + 1} attempts: "
            f"{last_error}"
        )


def judge_one(
    backend: JudgeBackend,
    prompt: JudgePrompt,
    retries: int = 2,
    *,
    score_only_max_tokens: int = 8,
    reason_max_tokens: int = 512,
) -> JudgeVerdict:
    """Run one scoring call, re-asking tersely on unparseable responses."""
    max_tokens = (
        score_only_max_tokens if prompt.format == "score_only" else reason_max_tokens
    )
    text = prompt.rendered_text
    raw = ""
    started = time.perf_counter()
    for attempt in range(retries + 1):
        raw = backend.complete(text, stop_condition=None, max_tokens=max_tokens)
        try:
            score, rationale = parse_score(raw, prompt.scale, prompt.format)
        except ScoreParseError:
            text = prompt.rendered_text + RETRY_SUFFIX
            continue
        return JudgeVerdict(
            criterion=prompt.criterion,
            score=score,
            rationale=rationale,
            raw_response=raw,
            backend_id=backend.backend_id,
            latency=time.perf_counter() - started,
            prompt_hash=prompt.prompt_hash,
        )
    raise ScoreParseError(
        f"no in-scale score after {retries + 1} attempts", raw_response=raw
    )


@dataclass(frozen=True)
class JudgeSetResult:
    """Per-criterion verdicts, with failures reported rather than aborting."""

    verdicts: dict[str, JudgeVerdict]
    failures: dict[str, str]


def judge_criteria_set(
    backend: JudgeBackend,
    item: StoryItem,
    candidate: str,
    criteria: Sequence[str],
    format: str = "score_only",
    *,
    retries: int = 2,
    concurrency: int = 1,
) -> JudgeSetResult:
    """Score each criterion in an independent backend call.

    The derived minimum over logical/rational/complete_n is never asked of
    the judge; compute it downstream from the returned verdicts.
    """
    if not criteria:
        raise ValueError("criteria list is empty")
    prompts = {c: build_prompt(item, candidate, c, format) for c in criteria}
    verdicts: dict[str, JudgeVerdict] = {}
    failures: dict[str, str] = {}
    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            futures = {
                c: pool.submit(judge_one, backend, prompts[c], retries)
                for c in criteria
            }
        for criterion, future in futures.items():
            try:
                verdicts[criterion] = future.result()
            except (ScoreParseError, BackendError) as exc:
                failures[criterion] = str(exc)
    else:
        for criterion in criteria:
            try:
                verdicts[criterion] = judge_one(backend, prompts[criterion], retries)
            except (ScoreParseError, BackendError) as exc:
                failures[criterion] = str(exc)
    return JudgeSetResult(verdicts=verdicts, failures=failures)
