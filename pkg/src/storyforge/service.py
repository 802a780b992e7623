"""HTTP facade: reward scoring for external trainers, annotation workflow
for the browser UI, and on-demand agreement reports.

All state lives in single files (task JSONL, append-only annotation JSONL,
trace JSONL) so a deployment is auditable with a text editor. Every
annotator is assigned every (item, candidate) pair; pairwise agreement
statistics need that full overlap.
"""

from __future__ import annotations

import random
from typing import Any

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import agreement as agreement_mod
from .config import RunConfig
from .corpus import StoryItem, TaskItem, load_tasks
from .errors import (
    BackendError,
    DuplicateAnnotation,
    GroupTooSmall,
    InsufficientData,
    InvalidSpan,
    NarrativityMismatch,
    ScaleMismatch,
    SchemaError,
    StoryForgeError,
    UnknownItem,
)
from .evalharness import VerdictCache
from .judge import JudgeBackend, MockJudgeBackend
from .narrative import AnnotationRecord, AnnotationStore, annotated_text
from .reward import CompletionGroup, RewardSpec, TraceLog, reward_batch


class RewardSpecBody(BaseModel):
    kind: str
    length_penalty_ratio: float = 3.0
    penalty_value: float | None = None


class StoryItemBody(BaseModel):
    id: str
    premise: str
    initial: str
    original_ending: str
    counterfactual: str
    edited_endings: list[str] = Field(default_factory=list)


class RewardRequest(BaseModel):
    spec: RewardSpecBody | str
    item: StoryItemBody
    completions: list[str]


class SpanBody(BaseModel):
    stage: int
    start: int
    end: int


class CriteriaBody(BaseModel):
    logical: int
    rational: int
    complete_n: int


class AnnotationBody(BaseModel):
    annotator_id: str
    item_id: str
    candidate_tag: str
    spans: list[SpanBody] = Field(default_factory=list)
    criteria: CriteriaBody
    narrativity: int
    timestamp: str | None = None


def _error_response(status: int, error: str, message: str, **extra: Any) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"error": error, "message": message, **extra}
    )


def create_app(
    config: RunConfig | None = None,
    *,
    backend: JudgeBackend | None = None,
    tasks: tuple[TaskItem, ...] | None = None,
    store: AnnotationStore | None = None,
    cache: VerdictCache | None = None,
    trace: TraceLog | None = None,
) -> FastAPI:
    """Build the service; keyword overrides let tests inject fixtures."""
    config = config or RunConfig()
    settings = config.service
    if tasks is None:
        tasks = load_tasks(settings.tasks_path) if settings.tasks_path else ()
    task_index: dict[tuple[str, str], TaskItem] = {}
    for task in tasks:
        for candidate in task.candidates:
            task_index[(task.item.id, candidate.source_tag)] = task

    def lookup_text(item_id: str, candidate_tag: str) -> str:
        task = task_index[(item_id, candidate_tag)]  # KeyError -> UnknownItem
        return annotated_text(
            task.item.premise,
            task.item.counterfactual,
            task.candidate_text(candidate_tag),
        )

    if store is None:
        store = AnnotationStore(
            settings.annotations_path or None, text_lookup=lookup_text
        )
    if backend is None:
        backend_settings = config.backends.get(settings.backend)
        if settings.backend == "mock" or backend_settings is None:
            backend = MockJudgeBackend(
                seed=backend_settings.seed if backend_settings else 0
            )
        else:
            from .judge import HttpChatBackend

            backend = HttpChatBackend(
                settings.backend,
                backend_settings.base_url,
                backend_settings.model,
                api_key_env=backend_settings.api_key_env,
                timeout=backend_settings.timeout,
                retries=backend_settings.retries,
            )
    if cache is None:
        cache = VerdictCache(settings.verdict_cache_path or None)
    if trace is None:
        trace = TraceLog(settings.trace_path or None)

    import os

    auth_token = (
        os.environ.get(settings.auth_token_env, "") if settings.auth_token_env else ""
    )

    app = FastAPI(title="storyforge service", version="0.1.0")
    app.state.backend = backend
    app.state.cache = cache
    app.state.store = store
    app.state.trace = trace

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        return _error_response(400, "schema", str(exc.errors()[:3]))

    @app.middleware("http")
    async def check_auth(request: Request, call_next):
        if auth_token and request.url.path.startswith("/v1"):
            header = request.headers.get("authorization", "")
            if header != f"Bearer {auth_token}":
                return _error_response(401, "unauthorized", "bad or missing token")
        return await call_next(request)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "tasks": len(tasks), "annotations": len(store)}

    @app.post("/v1/reward")
    def reward_endpoint(body: RewardRequest):
        if isinstance(body.spec, str):
            spec_kwargs: dict[str, Any] = {"kind": body.spec}
        else:
            spec_kwargs = body.spec.model_dump()
        try:
            spec = RewardSpec(**spec_kwargs)
        except SchemaError as exc:
            return _error_response(400, "schema", str(exc))
        n = len(body.completions)
        if n < 2:
            return _error_response(
                422, "GroupTooSmall", f"need at least 2 completions, got {n}"
            )
        if n > config.reward.group_size_max:
            return _error_response(
                422,
                "GroupTooLarge",
                f"at most {config.reward.group_size_max} completions, got {n}",
            )
        try:
            item = StoryItem(
                id=body.item.id,
                premise=body.item.premise,
                initial=body.item.initial,
                original_ending=body.item.original_ending,
                counterfactual=body.item.counterfactual,
                edited_endings=tuple(body.item.edited_endings),
            )
        except SchemaError as exc:
            return _error_response(400, "schema", str(exc))
        group = CompletionGroup(item=item, completions=tuple(body.completions))
        try:
            (result,) = reward_batch(
                spec, [group], backend, trace=trace, judge_fn=cache.judge
            )
        except (ScaleMismatch, GroupTooSmall) as exc:
            return _error_response(422, type(exc).__name__, str(exc))
        except BackendError as exc:
            return _error_response(502, "BackendError", str(exc))
        if result.error is not None:
            return _error_response(
                502, "BackendError", "judging failed", detail=result.error
            )
        return {
            "rewards": list(result.rewards),
            "penalized": list(result.penalized),
            "advantages": list(result.advantages),
        }

    @app.get("/v1/annotation/tasks")
    def annotation_tasks(annotator: str):
        if annotator not in settings.annotators:
            return _error_response(404, "UnknownAnnotator", f"'{annotator}'")
        rated = store.rated_keys(annotator)
        pending = []
        for task in tasks:
            for candidate in task.candidates:
                key = (task.item.id, candidate.source_tag)
                if key not in rated:
                    pending.append(
                        {
                            "item": task.item.to_payload(),
                            "candidate_tag": candidate.source_tag,
                            "candidate_text": candidate.text,
                            "annotated_text": annotated_text(
                                task.item.premise,
                                task.item.counterfactual,
                                candidate.text,
                            ),
                        }
                    )
        rng = random.Random(f"{settings.task_order_seed}:{annotator}")
        rng.shuffle(pending)
        return {"annotator": annotator, "tasks": pending}

    @app.post("/v1/annotation")
    def submit_annotation(body: AnnotationBody):
        if body.annotator_id not in settings.annotators:
            return _error_response(404, "UnknownAnnotator", f"'{body.annotator_id}'")
        try:
            record = AnnotationRecord.from_payload(body.model_dump())
        except (SchemaError, InvalidSpan) as exc:
            return _error_response(422, type(exc).__name__, str(exc))
        try:
            record_id = store.attach(record)
        except UnknownItem as exc:
            return _error_response(404, "UnknownItem", str(exc))
        except DuplicateAnnotation as exc:
            return _error_response(409, "DuplicateAnnotation", str(exc))
        except (NarrativityMismatch, InvalidSpan) as exc:
            return _error_response(422, type(exc).__name__, str(exc))
        return store.get(record_id).to_payload()

    @app.get("/v1/annotation/{record_id}")
    def get_annotation(record_id: str):
        try:
            return store.get(record_id).to_payload()
        except KeyError:
            return _error_response(404, "UnknownRecord", record_id)

    @app.get("/v1/agreement")
    def agreement_endpoint(criterion: str):
        if criterion not in agreement_mod.CORRELATION_COLUMNS:
            return _error_response(400, "schema", f"unknown criterion '{criterion}'")
        try:
            matrix = agreement_mod.rating_matrix_from_records(
                store.records(), criterion
            )
            report = agreement_mod.compute_agreement_report(matrix)
        except InsufficientData as exc:
            return _error_response(409, "InsufficientOverlap", str(exc))
        except StoryForgeError as exc:
            return _error_response(409, type(exc).__name__, str(exc))
        return report.to_payload()

    return app
