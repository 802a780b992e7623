"""`forge`: one entry point over the whole toolkit.

Subcommands: `corpus validate`, `curate`, `judge`, `agree`, `reward`,
`trace monitor`, `trace export`, `eval`, `serve`. Usage errors exit 2
(click's default); data errors print one machine-readable JSON object to
stderr and exit 1. Every artifact opens with a ``_meta`` line carrying the
config hash and the principle-file hash so results stay attributable.
"""

from __future__ import annotations

import csv
import functools
import json
import sys
from pathlib import Path

import click

from . import corpus as corpus_mod
from . import similarity as sim_mod
from .agreement import (
    CORRELATION_COLUMNS,
    compute_agreement_report,
    criteria_correlation,
    rating_matrix_from_records,
)
from .config import RunConfig, load_config
from .errors import SchemaError, StoryForgeError
from .evalharness import (
    HUMAN_ROW_NOTE,
    VerdictCache,
    evaluate_references,
    evaluate_reteller,
)
from .judge import (
    CRITERION_SCALES,
    FORMATS,
    HttpChatBackend,
    MockJudgeBackend,
    build_prompt,
    judge_one,
    principles_hash,
)
from .narrative import AnnotationRecord
from .reward import (
    CompletionGroup,
    PlateauConfig,
    RewardSpec,
    TraceLog,
    TrainingTrace,
    detect_reward_plateau,
    detect_sft_convergence,
    reward_batch,
)

HUMAN_TAG = "human"

CRITERIA_ALIASES = {
    "all": ("logical", "rational", "complete_n", "overall", "overall5", "narrativity"),
    "lrc": ("logical", "rational", "complete_n"),
}

AGREE_ALIASES = {"all": CORRELATION_COLUMNS}


def _meta(config: RunConfig) -> dict:
    return {
        "_meta": {
            "tool": "storyforge",
            "config_hash": config.config_hash(),
            "principles_hash": principles_hash(),
        }
    }


def _dumps(payload: dict) -> str:
    return json.dumps(payload, ensure_ascii=False, sort_keys=True)


def _data_errors(fn):
    """Data problems exit 1 with a JSON error object on stderr."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (StoryForgeError, OSError) as exc:
            payload = {"error": type(exc).__name__, "message": str(exc)}
            line_no = getattr(exc, "line_no", None)
            if line_no is not None:
                payload["line"] = line_no
            click.echo(json.dumps(payload), err=True)
            sys.exit(1)

    return wrapper


def _make_backend(config: RunConfig, name: str):
    if name == "mock":
        settings = config.backends.get("mock")
        return MockJudgeBackend(seed=settings.seed if settings else 0)
    if name not in config.backends:
        raise SchemaError(f"backend '{name}' not defined in config")
    settings = config.backends[name]
    return HttpChatBackend(
        name,
        settings.base_url,
        settings.model,
        api_key_env=settings.api_key_env,
        timeout=settings.timeout,
        retries=settings.retries,
    )


def _parse_criteria(raw: str, aliases: dict) -> tuple[str, ...]:
    names: list[str] = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        names.extend(aliases.get(part, (part,)))
    if not names:
        raise SchemaError("no criteria given")
    return tuple(dict.fromkeys(names))


@click.group()
@click.version_option(package_name="storyforge", prog_name="forge")
def main():
    """Narrative-criteria evaluation and reward toolkit."""


@main.group()
def corpus():
    """Corpus file operations."""


@corpus.command("validate")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--split", "split_name", required=True,
              type=click.Choice(corpus_mod.SPLIT_NAMES))
@click.option("--lenient", is_flag=True, help="Skip malformed lines, report counts.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@_data_errors
def corpus_validate(path, split_name, lenient, config_path):
    """Parse a split file and report how many records it holds."""
    config = load_config(config_path)
    if lenient:
        items, problems = corpus_mod.scan_split(path, split_name)
        click.echo(_dumps({
            "split_name": split_name,
            "path": str(path),
            "count": len(items),
            "rejected": len(problems),
            "first_errors": [str(p) for p in problems[:5]],
            "config_hash": config.config_hash(),
        }))
        return
    manifest = corpus_mod.make_manifest(path, split_name)
    payload = manifest.to_payload()
    payload["config_hash"] = config.config_hash()
    click.echo(_dumps(payload))


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--prefix", type=int, default=None, help="Items to keep from the file head.")
@click.option("--gens", type=int, default=None, help="Generated retellings per item.")
@click.option("--top", "top_k", type=int, default=None, help="Most diverse items to keep.")
@click.option("--provider", type=click.Choice(["token-overlap", "http"]), default=None)
@click.option("--provider-url", default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@_data_errors
def curate(in_path, out_path, prefix, gens, top_k, provider, provider_url, config_path):
    """Select the most diverse items and emit their candidate retellings.

    The input carries story fields plus a `generations` list per line; the
    output keeps, for each selected item, the generated retellings and the
    human-written one under the 'human' tag.
    """
    config = load_config(config_path)
    cur = config.curation
    prefix = cur.prefix if prefix is None else prefix
    gens = cur.generations if gens is None else gens
    top_k = cur.top_k if top_k is None else top_k
    provider_name = provider or cur.provider
    if provider_name == "http":
        url = provider_url or cur.provider_url
        if not url:
            raise SchemaError("http provider needs --provider-url")
        dist_provider = sim_mod.HttpSimilarityProvider(
            url, timeout=cur.provider_timeout, retries=cur.provider_retries
        )
    else:
        dist_provider = sim_mod.TokenOverlapProvider()

    rows = corpus_mod.take_prefix(
        corpus_mod.load_curation_inputs(in_path, expected_generations=gens), prefix
    )
    records = []
    by_id = {}
    for item, gen_set in rows:
        if not item.edited_endings:
            raise SchemaError(f"item {item.id}: needs a human edited ending")
        if any(c.source_tag == HUMAN_TAG for c in gen_set.candidates):
            raise SchemaError(f"item {item.id}: tag '{HUMAN_TAG}' is reserved")
        distances = sim_mod.pairwise_distances(
            list(gen_set.texts()),
            dist_provider,
            item_id=item.id,
            labels=[c.source_tag for c in gen_set.candidates],
            batch_size=cur.batch_size,
        )
        record = sim_mod.diversity(distances)
        records.append(record)
        by_id[item.id] = (item, gen_set, record)

    selected = sim_mod.select_top_diverse(records, top_k)
    with open(out_path, "w", encoding="utf-8") as handle:
        handle.write(_dumps(_meta(config)) + "\n")
        for item_id in selected:
            item, gen_set, record = by_id[item_id]
            payload = item.to_payload()
            payload["candidates"] = [c.to_payload() for c in gen_set.candidates] + [
                {"source_tag": HUMAN_TAG, "text": item.edited_endings[0]}
            ]
            payload["diversity"] = record.to_payload()
            handle.write(_dumps(payload) + "\n")
    click.echo(_dumps({
        "selected": len(selected),
        "candidates": sum(len(by_id[i][1].candidates) + 1 for i in selected),
        "out": str(out_path),
    }))


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--criteria", default="overall", show_default=True,
              help="Comma list, or 'lrc', or 'all'.")
@click.option("--format", "fmt", type=click.Choice(FORMATS), default="score_only",
              show_default=True)
@click.option("--backend", default="mock", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--retries", type=int, default=2, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@_data_errors
def judge(in_path, criteria, fmt, backend, out_path, retries, config_path):
    """Score every candidate in a task file, one verdict line per criterion."""
    config = load_config(config_path)
    names = _parse_criteria(criteria, CRITERIA_ALIASES)
    for name in names:
        if name not in CRITERION_SCALES:
            raise SchemaError(f"unknown criterion '{name}'")
    judge_backend = _make_backend(config, backend)
    tasks = corpus_mod.load_tasks(in_path)
    with open(out_path, "w", encoding="utf-8") as handle:
        handle.write(_dumps(_meta(config)) + "\n")
        for task in tasks:
            for candidate in task.candidates:
                for name in names:
                    prompt = build_prompt(task.item, candidate.text, name, fmt)
                    verdict = judge_one(judge_backend, prompt, retries)
                    payload = verdict.to_payload()
                    payload["item_id"] = task.item.id
                    payload["candidate_tag"] = candidate.source_tag
                    handle.write(_dumps(payload) + "\n")
    click.echo(_dumps({"tasks": len(tasks), "criteria": list(names), "out": str(out_path)}))


@main.command()
@click.option("--annotations", "ann_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--criteria", default="all", show_default=True)
@click.option("--weights", type=click.Choice(["quadratic", "identity"]),
              default="quadratic", show_default=True)
@click.option("--correlations", is_flag=True,
              help="Also report inter-criteria rank correlations.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@_data_errors
def agree(ann_path, criteria, weights, correlations, out_path, config_path):
    """Inter-annotator agreement over an annotation export."""
    config = load_config(config_path)
    names = _parse_criteria(criteria, AGREE_ALIASES)
    records = []
    with open(ann_path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            payload = json.loads(line)
            if "_meta" in payload:
                continue
            records.append(AnnotationRecord.from_payload(payload))
    reports = []
    for name in names:
        matrix = rating_matrix_from_records(records, name)
        reports.append(
            compute_agreement_report(
                matrix, kappa_weights=weights, ac2_weights=weights
            ).to_payload()
        )
    payload = {"meta": _meta(config)["_meta"], "reports": reports}
    if correlations:
        payload["correlations"] = criteria_correlation(records).to_payload()
    Path(out_path).write_text(
        json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    click.echo(_dumps({"criteria": list(names), "n_records": len(records),
                       "out": str(out_path)}))


@main.command()
@click.option("--spec", "kind", required=True, type=click.Choice(sorted(
    ("R_O", "R_O5", "R_N"))))
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--backend", default="mock", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False), default=None,
              help="Append per-group mean/std rows to this JSONL log.")
@click.option("--format", "fmt", type=click.Choice(FORMATS), default="score_only",
              show_default=True)
@click.option("--retries", type=int, default=2, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@_data_errors
def reward(kind, in_path, backend, out_path, trace_path, fmt, retries, config_path):
    """Score completion groups and emit rewards with group-relative advantages."""
    config = load_config(config_path)
    spec = RewardSpec(
        kind=kind,
        length_penalty_ratio=config.reward.length_penalty_ratio,
        penalty_value=config.reward.penalty_value,
    )
    judge_backend = _make_backend(config, backend)
    groups = []
    with open(in_path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            payload = json.loads(line)
            if "_meta" in payload:
                continue
            if "item" not in payload or "completions" not in payload:
                raise SchemaError("group line needs 'item' and 'completions'", line_no)
            item = corpus_mod.item_from_payload(
                payload["item"], line_no=line_no, default_id=f"item-{line_no:06d}"
            )
            groups.append(
                CompletionGroup(
                    item=item, completions=tuple(payload["completions"])
                )
            )
    trace = TraceLog(trace_path) if trace_path else None
    results = reward_batch(
        spec, groups, judge_backend, format=fmt, retries=retries, trace=trace
    )
    with open(out_path, "w", encoding="utf-8") as handle:
        handle.write(_dumps(_meta(config)) + "\n")
        for result in results:
            handle.write(_dumps(result.to_payload()) + "\n")
    click.echo(_dumps({
        "groups": len(results),
        "invalid": sum(1 for r in results if r.error is not None),
        "out": str(out_path),
    }))


@main.group()
def trace():
    """Training-trace monitors and exports."""


def _parse_plateau(raw: str) -> PlateauConfig:
    try:
        window, tolerance, max_reward = raw.split(":")
        return PlateauConfig(
            window=int(window), tolerance=float(tolerance), max_reward=float(max_reward)
        )
    except ValueError:
        raise SchemaError(f"--plateau expects WINDOW:TOLERANCE:MAX, got '{raw}'") from None


def _parse_sft(raw: str) -> tuple[float, int]:
    try:
        delta, run = raw.split(":")
        return float(delta), int(run)
    except ValueError:
        raise SchemaError(f"--sft expects DELTA:RUN, got '{raw}'") from None


@trace.command("monitor")
@click.option("--log", "log_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--plateau", "plateau_raw", default=None,
              help="Reward plateau rule, WINDOW:TOLERANCE:MAX (e.g. 200:0.1:3).")
@click.option("--sft", "sft_raw", default=None,
              help="Loss convergence rule, DELTA:RUN (e.g. 0.01:3).")
@_data_errors
def trace_monitor(log_path, plateau_raw, sft_raw):
    """Report where early-stopping rules fire on a step log."""
    if plateau_raw is None and sft_raw is None:
        raise click.UsageError("give at least one of --plateau / --sft")
    log = TrainingTrace.from_jsonl(log_path)
    out = {}
    if plateau_raw is not None:
        out["plateau_step"] = detect_reward_plateau(log, _parse_plateau(plateau_raw))
    if sft_raw is not None:
        delta, run = _parse_sft(sft_raw)
        out["sft_step"] = detect_sft_convergence(log, delta, run)
    click.echo(_dumps(out))


@trace.command("export")
@click.option("--log", "log_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--csv", "csv_path", required=True, type=click.Path(dir_okay=False))
@_data_errors
def trace_export(log_path, csv_path):
    """Flatten a step log into CSV for plotting."""
    log = TrainingTrace.from_jsonl(log_path)
    with open(csv_path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["step", "mean_reward", "std_reward", "loss"])
        for row in log.rows:
            writer.writerow([
                row.step,
                "" if row.mean_reward is None else row.mean_reward,
                "" if row.std_reward is None else row.std_reward,
                "" if row.loss is None else row.loss,
            ])
    click.echo(_dumps({"rows": len(log.rows), "out": str(csv_path)}))


@main.command("eval")
@click.option("--split", "split_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--generations", "gens_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSONL of {item_id, text}; omit with --references.")
@click.option("--backend", default="mock", show_default=True)
@click.option("--report", "report_path", required=True, type=click.Path(dir_okay=False))
@click.option("--reteller", default="generations", show_default=True)
@click.option("--references", "include_references", is_flag=True,
              help="Also evaluate the human-written references row.")
@click.option("--cache", "cache_path", type=click.Path(dir_okay=False), default=None)
@click.option("--format", "fmt", type=click.Choice(FORMATS), default="score_only",
              show_default=True)
@click.option("--retries", type=int, default=2, show_default=True)
@click.option("--split-name", default="test", show_default=True,
              type=click.Choice(corpus_mod.SPLIT_NAMES))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@_data_errors
def eval_command(split_path, gens_path, backend, report_path, reteller,
                 include_references, cache_path, fmt, retries, split_name, config_path):
    """Judge-scored criteria plus similarity metrics over a split."""
    config = load_config(config_path)
    if gens_path is None and not include_references:
        raise click.UsageError("give --generations and/or --references")
    split = corpus_mod.load_split(split_path, split_name)
    judge_backend = _make_backend(config, backend)
    cache = VerdictCache(cache_path)
    rows = []
    failures = {}
    if gens_path is not None:
        generations = {}
        with open(gens_path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                payload = json.loads(line)
                if "_meta" in payload:
                    continue
                generations[str(payload["item_id"])] = str(payload["text"])
        result = evaluate_reteller(
            reteller, generations, split, judge_backend,
            cache=cache, format=fmt, retries=retries,
        )
        rows.append(result.row.to_payload())
        failures.update(result.failures)
    if include_references:
        result = evaluate_references(
            split, judge_backend, cache=cache, format=fmt, retries=retries
        )
        rows.append(result.row.to_payload())
        failures.update(result.failures)
    payload = {"meta": _meta(config)["_meta"], "rows": rows}
    if include_references:
        payload["meta"]["human_row_note"] = HUMAN_ROW_NOTE
    if failures:
        payload["failures"] = failures
    Path(report_path).write_text(
        json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    click.echo(_dumps({"rows": len(rows), "out": str(report_path)}))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@_data_errors
def serve(config_path, host, port):
    """Run the HTTP service (reward + annotation endpoints)."""
    import uvicorn

    from .service import create_app

    config = load_config(config_path)
    app = create_app(config)
    uvicorn.run(
        app,
        host=host or config.service.host,
        port=port or config.service.port,
        log_level="warning",
    )


if __name__ == "__main__":
    main()
