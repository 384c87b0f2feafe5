import csv
import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from persum.cli import main
from persum.corpus import load_corpus
from persum.gateway import fingerprint
from persum.metrics import TASK_A_METRICS, TASK_B_METRICS
from persum.parsing import (
    LabeledSpan,
    PredictionRecord,
    parse_spans,
    read_predictions,
    serialize_spans,
    serialize_summaries,
    write_predictions,
)
from persum.prompting import build_task_a_prompt, build_task_b_prompt
from tests.conftest import DATA

CORPUS = str(DATA / "fixture_corpus.json")
AGENT = {"name": "solo", "model_id": "test-model"}


@pytest.fixture
def runner():
    return CliRunner()


def write_json(path: Path, data: dict) -> str:
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def base_config(tmp_path: Path, **overrides) -> str:
    data = {
        "corpus": CORPUS,
        "task": "A",
        "setting": "zero-shot",
        "output_dir": str(tmp_path / "out"),
        "agent": AGENT,
    }
    data.update(overrides)
    return write_json(tmp_path / "config.json", data)


def gold_mock(threads, tasks=("A",)) -> dict:
    """Fingerprint script answering every zero-shot prompt with gold output."""
    fingerprints = {}
    for thread in threads:
        a_text = serialize_spans(
            [LabeledSpan(s.text, s.label) for s in thread.gold_spans]
        )
        if "A" in tasks:
            prompt = build_task_a_prompt(thread)
            fingerprints[fingerprint("solo", prompt)] = {"text": a_text}
        if "B" in tasks:
            spans, _ = parse_spans(a_text, thread, policy="lenient")
            prompt = build_task_b_prompt(thread, spans)
            fingerprints[fingerprint("solo", prompt)] = {
                "text": serialize_summaries(thread.gold_summaries)
            }
    return {"fingerprints": fingerprints}


def test_run_zero_shot_task_a(runner, tmp_path, threads):
    config = base_config(tmp_path)
    mock = write_json(tmp_path / "mock.json", gold_mock(threads))
    result = runner.invoke(main, ["run", "--config", config, "--mock", mock])
    assert result.exit_code == 0, result.output
    assert "run complete" in result.output
    records = read_predictions(tmp_path / "out" / "predictions.jsonl")
    assert len(records) == 5
    assert [r.thread_id for r in records] == [t.id for t in threads]
    by_id = {r.thread_id: r for r in records}
    for thread in threads:
        spans = by_id[thread.id].spans
        assert all(s.grounded for s in spans)
        assert [(s.answer_index, s.start, s.end, s.label) for s in spans] == [
            (g.answer_index, g.start, g.end, g.label) for g in thread.gold_spans
        ]
    metadata = json.loads((tmp_path / "out" / "metadata.json").read_text())
    assert metadata["official_split_sizes"] == {"train": 2236, "valid": 959, "test": 50}
    assert metadata["failures"] == []


def test_run_then_evaluate_perfect(runner, tmp_path, threads):
    config = base_config(tmp_path)
    mock = write_json(tmp_path / "mock.json", gold_mock(threads))
    assert runner.invoke(main, ["run", "--config", config, "--mock", mock]).exit_code == 0
    result = runner.invoke(
        main,
        ["evaluate", "--pred", str(tmp_path / "out" / "predictions.jsonl"), "--gold", CORPUS],
    )
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["task_a"]["overall"] == pytest.approx(1.0)
    header = (tmp_path / "out" / "report.txt").read_text().splitlines()[1]
    assert header.split("\t") == ["Model", "Setting", *TASK_A_METRICS, "Overall"]
    assert (tmp_path / "out" / "confusion.csv").exists()


def test_run_a_then_b(runner, tmp_path, threads):
    config = base_config(tmp_path, task="A-then-B")
    mock = write_json(tmp_path / "mock.json", gold_mock(threads, tasks=("A", "B")))
    result = runner.invoke(main, ["run", "--config", config, "--mock", mock])
    assert result.exit_code == 0, result.output
    records = read_predictions(tmp_path / "out" / "predictions.jsonl")
    assert len(records) == 10
    assert sorted({r.task for r in records}) == ["A", "B"]
    by_key = {(r.thread_id, r.task): r for r in records}
    for thread in threads:
        assert by_key[(thread.id, "B")].summaries == thread.gold_summaries

    result = runner.invoke(
        main,
        ["evaluate", "--pred", str(tmp_path / "out" / "predictions.jsonl"), "--gold", CORPUS],
    )
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["task_b"]["metrics"]["R-1"] == pytest.approx(1.0)
    assert report["task_b"]["status"] == "partial (5/8)"


def test_run_resumable(runner, tmp_path, threads):
    config = base_config(tmp_path)
    mock = write_json(tmp_path / "mock.json", gold_mock(threads))
    assert runner.invoke(main, ["run", "--config", config, "--mock", mock]).exit_code == 0
    first = (tmp_path / "out" / "predictions.jsonl").read_text()
    assert runner.invoke(main, ["run", "--config", config, "--mock", mock]).exit_code == 0
    assert (tmp_path / "out" / "predictions.jsonl").read_text() == first


def test_run_limit(runner, tmp_path, threads):
    config = base_config(tmp_path)
    mock = write_json(tmp_path / "mock.json", gold_mock(threads))
    result = runner.invoke(main, ["run", "--config", config, "--mock", mock, "--limit", "2"])
    assert result.exit_code == 0, result.output
    assert len(read_predictions(tmp_path / "out" / "predictions.jsonl")) == 2


def test_run_failures_exit_nonzero(runner, tmp_path):
    config = base_config(tmp_path)
    mock = write_json(tmp_path / "mock.json", {})
    result = runner.invoke(main, ["run", "--config", config, "--mock", mock])
    assert result.exit_code == 1
    metadata = json.loads((tmp_path / "out" / "metadata.json").read_text())
    assert len(metadata["failures"]) == 5


def test_run_unknown_config_field(runner, tmp_path):
    config = base_config(tmp_path, typo_field=1)
    result = runner.invoke(main, ["run", "--config", config, "--mock", config])
    assert result.exit_code != 0
    assert "typo_field" in result.output


def test_few_shot_cluster_deterministic(runner, tmp_path, threads):
    mock = write_json(
        tmp_path / "mock.json",
        {
            "contains": [
                {
                    "needle": "Now solve the following instance.",
                    "text": serialize_spans(
                        [LabeledSpan(s.text, s.label) for s in threads[4].gold_spans]
                    ),
                }
            ]
        },
    )
    outputs = []
    for name in ("run1", "run2"):
        config = base_config(
            tmp_path,
            setting="few-shot-cluster",
            shots=2,
            seed=13,
            split={"train": 4, "valid": 0, "test": 1, "eval": "test"},
            output_dir=str(tmp_path / name),
        )
        result = runner.invoke(main, ["run", "--config", config, "--mock", mock])
        assert result.exit_code == 0, result.output
        outputs.append((tmp_path / name / "predictions.jsonl").read_text())
    assert outputs[0] == outputs[1]
    records = read_predictions(tmp_path / "run1" / "predictions.jsonl")
    assert [r.thread_id for r in records] == ["t5"]
    assert all(s.grounded for s in records[0].spans)


def test_evaluate_with_scorer_completes_task_b(runner, tmp_path, threads):
    pred_path = tmp_path / "pred.jsonl"
    write_predictions(
        [PredictionRecord(t.id, "B", summaries=dict(t.gold_summaries)) for t in threads],
        pred_path,
    )
    pairs = sum(len(t.gold_summaries) for t in threads)
    scorer = tmp_path / "scores.jsonl"
    scorer.write_text(
        "".join(
            json.dumps({"bertscore": 1.0, "alignscore": 1.0, "summac": 1.0}) + "\n"
            for _ in range(pairs)
        )
    )
    result = runner.invoke(
        main,
        ["evaluate", "--pred", str(pred_path), "--gold", CORPUS,
         "--scorer", str(scorer), "--out", str(tmp_path / "eval")],
    )
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "eval" / "report.json").read_text())
    assert report["task_b"]["status"] == "complete"
    assert report["task_b"]["overall"] == pytest.approx(1.0, abs=0.02)
    header = (tmp_path / "eval" / "report.txt").read_text().splitlines()[1]
    assert header.split("\t") == ["Model", "Setting", *TASK_B_METRICS, "Overall"]


def test_sweep_layers_grid(runner, tmp_path):
    base = write_json(
        tmp_path / "moa.json",
        {
            "task": "A",
            "layers": [
                {
                    "role": "PROPOSE",
                    "agents": [
                        {"name": "llama", "model_id": "llama-70b"},
                        {"name": "qwen", "model_id": "qwen-72b"},
                    ],
                }
            ],
            "aggregator": {"name": "agg", "model_id": "llama-70b"},
        },
    )
    config = base_config(
        tmp_path,
        setting="moa",
        moa="moa.json",
        agent=None,
        limit=2,
        output_dir=str(tmp_path / "sweep"),
        baselines={"reference": 0.5697},
    )
    mock = write_json(
        tmp_path / "mock.json",
        {
            "contains": [
                {
                    "needle": "Format your response as: span:",
                    "text": 'span: "Stress and poor sleep are common triggers for migraines.", label: "CAUSE"',
                }
            ]
        },
    )
    result = runner.invoke(
        main, ["sweep-layers", "--base", base, "--config", config, "--mock", mock]
    )
    assert result.exit_code == 0, result.output
    summary = json.loads((tmp_path / "sweep" / "summary.json").read_text())
    assert len(summary) == 6
    assert {row["status"] for row in summary} == {"ok"}
    assert {(row["layers"], row["proposers"]) for row in summary} == {
        (l, p) for l in (1, 2, 3) for p in ("single", "multi")
    }
    for row in summary:
        cell_dir = tmp_path / "sweep" / row["cell"]
        assert (cell_dir / "predictions.jsonl").exists()
        assert (cell_dir / "report.json").exists()
        assert (cell_dir / "traces.jsonl").exists()
    with open(tmp_path / "sweep" / "chart.csv", newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["series", "layers", "overall"]
    assert len(rows) == 1 + 6 + 3
    assert sum(1 for r in rows if r[0] == "baseline:reference") == 3
