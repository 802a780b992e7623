from __future__ import annotations

import json
import random

import pytest
from click.testing import CliRunner

from storyforge.cli import main
from storyforge.similarity import token_overlap_f1

from .conftest import make_item, write_curation_corpus


@pytest.fixture
def runner():
    return CliRunner()


def write_split(path, n_items, n_refs=3, seed=40):
    rng = random.Random(seed)
    items = [make_item(rng, f"cli{i:03d}", n_refs=n_refs) for i in range(n_items)]
    with open(path, "w", encoding="utf-8") as handle:
        for item in items:
            handle.write(json.dumps(item.to_payload()) + "\n")
    return items


def test_corpus_validate_reports_count(runner, tmp_path):
    path = tmp_path / "split.jsonl"
    write_split(path, 6)
    result = runner.invoke(main, ["corpus", "validate", str(path), "--split", "test"])
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)
    assert payload["count"] == 6
    assert "config_hash" in payload


def test_corpus_validate_bad_data_exits_one(runner, tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"premise": "only this"}\n')
    result = runner.invoke(main, ["corpus", "validate", str(path), "--split", "test"])
    assert result.exit_code == 1
    error = json.loads(result.output.strip().splitlines()[-1])
    assert error["error"] == "SchemaError"
    assert error["line"] == 1


def test_corpus_validate_lenient_counts_rejects(runner, tmp_path):
    path = tmp_path / "mixed.jsonl"
    items = write_split(path, 3)
    with open(path, "a", encoding="utf-8") as handle:
        handle.write('{"premise": "broken"}\n')
    result = runner.invoke(
        main, ["corpus", "validate", str(path), "--split", "test", "--lenient"]
    )
    assert result.exit_code == 0
    payload = json.loads(result.output)
    assert payload["count"] == 3
    assert payload["rejected"] == 1


def test_unknown_flag_exits_two(runner):
    assert runner.invoke(main, ["curate", "--bogus"]).exit_code == 2


def test_unknown_subcommand_exits_two(runner):
    assert runner.invoke(main, ["transmogrify"]).exit_code == 2


def test_curate_selects_brute_force_top_k(runner, tmp_path):
    corpus = tmp_path / "cur.jsonl"
    write_curation_corpus(corpus, 60, seed=41)
    out = tmp_path / "set.jsonl"
    result = runner.invoke(main, [
        "curate", "--in", str(corpus), "--out", str(out),
        "--prefix", "40", "--gens", "3", "--top", "10",
    ])
    assert result.exit_code == 0, result.output
    summary = json.loads(result.output)
    assert summary["selected"] == 10
    assert summary["candidates"] == 40  # 3 generations + human, per selected item

    lines = out.read_text().strip().splitlines()
    assert json.loads(lines[0]).get("_meta")
    selected_ids = [json.loads(line)["id"] for line in lines[1:]]

    # brute-force oracle: per-pair distances outside the matrix builder
    expected = []
    with open(corpus, encoding="utf-8") as handle:
        rows = [json.loads(line) for line in handle][:40]
    for row in rows:
        texts = [g["text"] for g in row["generations"]]
        entries = [
            1.0 - token_overlap_f1(texts[i], texts[j])
            for i in range(3)
            for j in range(i + 1, 3)
        ]
        expected.append((row["id"], min(entries) * (sum(entries) / len(entries))))
    expected.sort(key=lambda pair: (-pair[1], pair[0]))
    assert selected_ids == [item_id for item_id, _ in expected[:10]]


def test_curate_is_byte_identical_across_runs(runner, tmp_path):
    corpus = tmp_path / "cur.jsonl"
    write_curation_corpus(corpus, 30, seed=42)
    out1, out2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for out in (out1, out2):
        result = runner.invoke(main, [
            "curate", "--in", str(corpus), "--out", str(out),
            "--prefix", "30", "--gens", "3", "--top", "5",
        ])
        assert result.exit_code == 0, result.output
    assert out1.read_bytes() == out2.read_bytes()


def test_curate_rejects_missing_generations(runner, tmp_path):
    corpus = tmp_path / "cur.jsonl"
    write_curation_corpus(corpus, 5, seed=43, gens=2)
    result = runner.invoke(main, [
        "curate", "--in", str(corpus), "--out", str(tmp_path / "o.jsonl"),
        "--prefix", "5", "--gens", "3", "--top", "2",
    ])
    assert result.exit_code == 1
    assert json.loads(result.output.strip().splitlines()[-1])["error"] == "SchemaError"


def _run_curate(runner, tmp_path, n_items=8, top=4):
    corpus = tmp_path / "cur.jsonl"
    write_curation_corpus(corpus, n_items, seed=44)
    tasks = tmp_path / "tasks.jsonl"
    result = runner.invoke(main, [
        "curate", "--in", str(corpus), "--out", str(tasks),
        "--prefix", str(n_items), "--gens", "3", "--top", str(top),
    ])
    assert result.exit_code == 0, result.output
    return tasks


def test_judge_writes_verdict_lines(runner, tmp_path):
    tasks = _run_curate(runner, tmp_path)
    out = tmp_path / "verdicts.jsonl"
    result = runner.invoke(main, [
        "judge", "--in", str(tasks), "--criteria", "lrc",
        "--backend", "mock", "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    lines = [json.loads(l) for l in out.read_text().strip().splitlines()]
    assert "_meta" in lines[0]
    verdicts = lines[1:]
    assert len(verdicts) == 4 * 4 * 3  # items x candidates x criteria
    assert {v["criterion"] for v in verdicts} == {"logical", "rational", "complete_n"}
    assert all(1 <= v["score"] <= 3 for v in verdicts)
    assert all("latency" not in v for v in verdicts)


def test_judge_rejects_unknown_criterion(runner, tmp_path):
    tasks = _run_curate(runner, tmp_path)
    result = runner.invoke(main, [
        "judge", "--in", str(tasks), "--criteria", "sparkle",
        "--backend", "mock", "--out", str(tmp_path / "v.jsonl"),
    ])
    assert result.exit_code == 1


def test_agree_round_trip_through_cli(runner, tmp_path):
    # two annotators with identical ratings over three items
    records = []
    for annotator in ("a", "b"):
        for i in range(3):
            records.append({
                "annotator_id": annotator,
                "item_id": f"i{i}",
                "candidate_tag": "m0",
                "spans": [{"stage": 1, "start": 0, "end": 5},
                          {"stage": 3, "start": 6, "end": 11}],
                "criteria": {"logical": 3 if i else 2, "rational": 2, "complete_n": 3},
                "narrativity": 2,
                "timestamp": "2026-01-01T00:00:00+00:00",
            })
    ann = tmp_path / "ann.jsonl"
    ann.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    report_path = tmp_path / "report.json"
    result = runner.invoke(main, [
        "agree", "--annotations", str(ann), "--criteria", "all",
        "--weights", "quadratic", "--correlations", "--out", str(report_path),
    ])
    assert result.exit_code == 0, result.output
    report = json.loads(report_path.read_text())
    by_criterion = {r["criterion"]: r for r in report["reports"]}
    assert set(by_criterion) == {"logical", "rational", "complete_n", "min_lrc",
                                 "narrativity"}
    assert by_criterion["logical"]["percent_agreement"] == 1.0
    assert by_criterion["logical"]["ac2"] == 1.0
    assert by_criterion["logical"]["n_items"] == 3
    assert "correlations" in report


def test_reward_cli_with_trace(runner, tmp_path):
    rng = random.Random(45)
    groups_path = tmp_path / "groups.jsonl"
    with open(groups_path, "w", encoding="utf-8") as handle:
        for i in range(3):
            item = make_item(rng, f"g{i}", n_refs=0)
            handle.write(json.dumps({
                "item": item.to_payload(),
                "completions": [f"Ending {k} of item {i} holds." for k in range(4)],
            }) + "\n")
    out = tmp_path / "rewards.jsonl"
    trace = tmp_path / "trace.jsonl"
    result = runner.invoke(main, [
        "reward", "--spec", "R_N", "--in", str(groups_path),
        "--backend", "mock", "--out", str(out), "--trace", str(trace),
    ])
    assert result.exit_code == 0, result.output
    lines = [json.loads(l) for l in out.read_text().strip().splitlines()][1:]
    assert len(lines) == 3
    for group in lines:
        assert group["error"] is None
        assert abs(sum(group["advantages"])) < 1e-9
    trace_rows = [json.loads(l) for l in trace.read_text().strip().splitlines()]
    assert [r["step"] for r in trace_rows] == [1, 2, 3]


def test_trace_monitor_matches_detectors(runner, tmp_path):
    log = tmp_path / "log.jsonl"
    with open(log, "w", encoding="utf-8") as handle:
        for step in range(1, 251):
            mean = 2.95 if step > 30 else 2.0
            handle.write(json.dumps(
                {"step": step, "mean_reward": mean, "std_reward": 0.05}) + "\n")
    result = runner.invoke(main, [
        "trace", "monitor", "--log", str(log), "--plateau", "200:0.1:3",
    ])
    assert result.exit_code == 0, result.output
    assert json.loads(result.output)["plateau_step"] == 230

    loss_log = tmp_path / "loss.jsonl"
    with open(loss_log, "w", encoding="utf-8") as handle:
        for step, loss in enumerate([1.0, 0.995, 0.991, 0.990], start=1):
            handle.write(json.dumps({"step": step, "loss": loss}) + "\n")
    result = runner.invoke(main, [
        "trace", "monitor", "--log", str(loss_log), "--sft", "0.01:3",
    ])
    assert json.loads(result.output)["sft_step"] == 4

    result = runner.invoke(main, ["trace", "monitor", "--log", str(log)])
    assert result.exit_code == 2  # must request at least one detector


def test_trace_monitor_never_firing_prints_null(runner, tmp_path):
    log = tmp_path / "log.jsonl"
    with open(log, "w", encoding="utf-8") as handle:
        for step in range(1, 100):
            handle.write(json.dumps(
                {"step": step, "mean_reward": 2.0, "std_reward": 0.05}) + "\n")
    result = runner.invoke(main, [
        "trace", "monitor", "--log", str(log), "--plateau", "50:0.1:3",
    ])
    assert json.loads(result.output)["plateau_step"] is None


def test_trace_export_csv(runner, tmp_path):
    log = tmp_path / "log.jsonl"
    log.write_text(
        json.dumps({"step": 1, "mean_reward": 2.0, "std_reward": 0.1}) + "\n"
        + json.dumps({"step": 2, "loss": 0.9}) + "\n"
    )
    out = tmp_path / "curve.csv"
    result = runner.invoke(main, ["trace", "export", "--log", str(log),
                                  "--csv", str(out)])
    assert result.exit_code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "step,mean_reward,std_reward,loss"
    assert lines[1].startswith("1,2.0,0.1,")
    assert lines[2] == "2,,,0.9"


def test_eval_report_with_references_row(runner, tmp_path):
    split_path = tmp_path / "split.jsonl"
    items = write_split(split_path, 3)
    gens_path = tmp_path / "gens.jsonl"
    with open(gens_path, "w", encoding="utf-8") as handle:
        for item in items:
            handle.write(json.dumps(
                {"item_id": item.id, "text": item.edited_endings[0]}) + "\n")
    report_path = tmp_path / "report.json"
    result = runner.invoke(main, [
        "eval", "--split", str(split_path), "--generations", str(gens_path),
        "--backend", "mock", "--report", str(report_path),
        "--reteller", "copycat", "--references",
    ])
    assert result.exit_code == 0, result.output
    report = json.loads(report_path.read_text())
    assert [row["reteller"] for row in report["rows"]] == ["copycat", "human references"]
    copycat, human = report["rows"]
    assert copycat["bleu4"] == 1.0  # generation equals reference #1
    assert human["bleu4"] == 1.0
    assert human["rougeL"] == 1.0
    assert "human_row_note" in report["meta"]
    assert report["meta"]["config_hash"]
    assert report["meta"]["principles_hash"]


def test_eval_requires_some_row(runner, tmp_path):
    split_path = tmp_path / "split.jsonl"
    write_split(split_path, 2)
    result = runner.invoke(main, [
        "eval", "--split", str(split_path), "--backend", "mock",
        "--report", str(tmp_path / "r.json"),
    ])
    assert result.exit_code == 2


def test_config_file_rejects_unknown_keys(runner, tmp_path):
    config = tmp_path / "forge.yaml"
    config.write_text("curation:\n  prefix: 10\n  sparkles: 3\n")
    split_path = tmp_path / "split.jsonl"
    write_split(split_path, 2)
    result = runner.invoke(main, [
        "corpus", "validate", str(split_path), "--split", "test",
        "--config", str(config),
    ])
    assert result.exit_code == 1
    assert json.loads(result.output.strip().splitlines()[-1])["error"] == "ConfigError"


def test_config_values_flow_into_curate(runner, tmp_path):
    config = tmp_path / "forge.yaml"
    config.write_text("curation:\n  prefix: 6\n  generations: 3\n  top_k: 2\n")
    corpus = tmp_path / "cur.jsonl"
    write_curation_corpus(corpus, 10, seed=46)
    out = tmp_path / "out.jsonl"
    result = runner.invoke(main, [
        "curate", "--in", str(corpus), "--out", str(out), "--config", str(config),
    ])
    assert result.exit_code == 0, result.output
    assert json.loads(result.output)["selected"] == 2
