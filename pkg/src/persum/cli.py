"""Experiment driver: run pipelines over a corpus, evaluate predictions, and
sweep MoA layer configurations.

All randomness (k-means, exemplar ties) flows from the run config seed, so a
fixed config plus the mock backend reproduces outputs bit for bit. Runs are
resumable: re-invoking with the same output directory skips completed threads.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import click

from persum.corpus import (
    OFFICIAL_SPLIT_SIZES,
    Perspective,
    SplitSpec,
    Thread,
    load_corpus,
    split_corpus,
    tail,
)
from persum.exemplars import (
    kmeans,
    load_embeddings,
    manual_exemplars,
    select_exemplars,
    stub_embedding,
)
from persum.gateway import AgentSpec, Gateway, GatewayError, MockBackend, MockRule
from persum.metrics import (
    EvaluationError,
    evaluate_task_a,
    evaluate_task_b,
    external_scores,
    render_task_a_table,
    render_task_b_table,
)
from persum.moa import (
    LayerSpec,
    MoaConfig,
    PipelineError,
    Role,
    load_moa_config,
    run_pipeline,
)
from persum.parsing import (
    LabeledSpan,
    PredictionRecord,
    parse_spans,
    parse_summaries,
    read_predictions,
    write_predictions,
)
from persum.prompting import Exemplar, build_task_a_prompt, build_task_b_prompt

SETTINGS = ("zero-shot", "few-shot-manual", "few-shot-cluster", "moa")


@dataclasses.dataclass
class RunConfig:
    corpus: str
    task: str  # "A" | "B" | "A-then-B"
    setting: str
    output_dir: str
    schema: str = "canonical"
    split: dict | None = None
    agent: dict | None = None
    moa: str | dict | None = None
    shots: int = 3
    k: int | None = None
    seed: int = 0
    curated: list[str] = dataclasses.field(default_factory=list)
    embeddings: str = "stub"
    template_a: str = "task_a_default"
    template_b: str = "task_b_default"
    workers: int = 4
    limit: int | None = None
    baselines: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.task not in ("A", "B", "A-then-B"):
            raise click.ClickException(f"invalid task {self.task!r}")
        if self.setting not in SETTINGS:
            raise click.ClickException(f"invalid setting {self.setting!r}")
        if self.setting == "moa" and self.moa is None:
            raise click.ClickException("setting 'moa' requires a 'moa' config reference")
        if self.setting.startswith("few-shot") and self.shots < 1:
            raise click.ClickException("few-shot settings require shots >= 1")
        if self.setting == "few-shot-manual" and not self.curated:
            raise click.ClickException("few-shot-manual requires a 'curated' id list")
        if self.setting != "moa" and self.agent is None:
            raise click.ClickException(f"setting {self.setting!r} requires an 'agent' spec")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise click.ClickException(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


def load_mock_backend(path: str | Path) -> MockBackend:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    script = {
        fp: MockRule(text=entry.get("text"), failures=entry.get("failures", 0))
        for fp, entry in data.get("fingerprints", {}).items()
    }
    contains = [(rule["needle"], rule["text"]) for rule in data.get("contains", [])]
    return MockBackend(
        script=script,
        contains_rules=contains,
        agent_defaults=data.get("agents", {}),
        default_text=data.get("default"),
        echo=data.get("echo", False),
    )


def _select_split(threads: list[Thread], split: dict | None) -> list[Thread]:
    if split is None:
        return threads
    spec = SplitSpec(
        train_count=split.get("train", 0),
        valid_count=split.get("valid", 0),
        test_count=split.get("test", 0),
    )
    train, valid, test = split_corpus(threads, spec)
    piece = {"train": train, "valid": valid, "test": test}[split.get("eval", "test")]
    if split.get("tail"):
        piece = tail(piece, int(split["tail"]))
    return piece


def _train_split(threads: list[Thread], split: dict | None) -> list[Thread]:
    if split is None:
        return threads
    spec = SplitSpec(
        train_count=split.get("train", 0),
        valid_count=split.get("valid", 0),
        test_count=split.get("test", 0),
    )
    return split_corpus(threads, spec)[0]


class ExemplarSelector:
    """Resolves per-thread exemplar lists from the train split only."""

    def __init__(self, config: RunConfig, train: list[Thread], task: str):
        self.config = config
        self.task = task
        target = (
            (lambda t: t.gold_spans) if task == "A" else (lambda t: t.gold_summaries)
        )
        self.pool = {t.id: t for t in train if target(t)}

    def for_thread(self, thread: Thread) -> list[Exemplar]:
        config = self.config
        if config.setting == "zero-shot" or config.setting == "moa":
            return []
        if config.setting == "few-shot-manual":
            missing = [i for i in config.curated if i not in self.pool]
            if missing:
                raise click.ClickException(
                    f"curated exemplar ids not in train split (or lack targets): {missing}"
                )
            ids = manual_exemplars(config.curated, config.shots)
            return [Exemplar(self.pool[i], self.task) for i in ids]
        # few-shot-cluster
        vectors = None
        if config.embeddings != "stub":
            vectors = load_embeddings(config.embeddings)
        candidates = {
            i: (vectors[i] if vectors is not None else stub_embedding(self.pool[i].question))
            for i in self.pool
        }
        k = config.k or config.shots
        clustering = kmeans(candidates, k=k, seed=config.seed)
        query = (
            vectors[thread.id]
            if vectors is not None and thread.id in vectors
            else stub_embedding(thread.question)
        )
        ids = select_exemplars(clustering, query, config.shots, candidates)
        return [Exemplar(self.pool[i], self.task) for i in ids]


def _agent_from_dict(record: dict) -> AgentSpec:
    return AgentSpec(
        name=record["name"],
        model_id=record["model_id"],
        endpoint=record.get("endpoint", "mock://local"),
        temperature=record.get("temperature", 0.0),
        max_tokens=record.get("max_tokens", 1024),
        system_override=record.get("system_override"),
        auth_ref=record.get("auth_ref"),
    )


def _resolve_moa(config: RunConfig, base_dir: Path) -> MoaConfig | None:
    if config.moa is None:
        return None
    if isinstance(config.moa, str):
        path = Path(config.moa)
        if not path.is_absolute():
            path = base_dir / path
        return load_moa_config(path)
    from persum.moa import MoaConfig as _MoaConfig  # local alias for clarity

    layers = tuple(
        LayerSpec(
            role=Role[layer["role"]],
            agents=tuple(_agent_from_dict(a) for a in layer["agents"]),
            role_prompt=layer.get("role_prompt", ""),
        )
        for layer in config.moa["layers"]
    )
    return _MoaConfig(
        layers=layers,
        aggregator=_agent_from_dict(config.moa["aggregator"]),
        aggregator_prompt=config.moa.get("aggregator_prompt", ""),
        task="A" if config.task in ("A", "A-then-B") else "B",
    )


def _complete_task_a(
    gateway: Gateway,
    config: RunConfig,
    moa_config: MoaConfig | None,
    thread: Thread,
    exemplars: Sequence[Exemplar],
    trace_path: Path,
) -> str:
    if config.setting == "moa":
        assert moa_config is not None
        task_config = dataclasses.replace(moa_config, task="A")
        final, _ = run_pipeline(
            gateway, task_config, thread, exemplars=exemplars,
            template=config.template_a, trace_path=trace_path,
        )
        return final
    prompt = build_task_a_prompt(thread, exemplars, config.template_a)
    return gateway.complete(_agent_from_dict(config.agent), prompt).text


def _complete_task_b(
    gateway: Gateway,
    config: RunConfig,
    moa_config: MoaConfig | None,
    thread: Thread,
    spans: Sequence[LabeledSpan],
    exemplars: Sequence[Exemplar],
    trace_path: Path,
) -> str:
    if config.setting == "moa":
        assert moa_config is not None
        task_config = dataclasses.replace(moa_config, task="B")
        final, _ = run_pipeline(
            gateway, task_config, thread, spans=spans, exemplars=exemplars,
            template=config.template_b, trace_path=trace_path,
        )
        return final
    prompt = build_task_b_prompt(thread, spans, exemplars, config.template_b)
    return gateway.complete(_agent_from_dict(config.agent), prompt).text


def execute_run(config: RunConfig, backend=None, base_dir: Path = Path(".")) -> Path:
    """Run the configured pipeline over the evaluation split; returns the run dir."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    predictions_path = out / "predictions.jsonl"
    trace_path = out / "traces.jsonl"

    threads = load_corpus(config.corpus, config.schema)
    eval_threads = _select_split(threads, config.split)
    train = _train_split(threads, config.split)
    if config.limit is not None:
        eval_threads = eval_threads[: config.limit]

    done: set[tuple[str, str]] = set()
    if predictions_path.exists():
        done = {(r.thread_id, r.task) for r in read_predictions(predictions_path)}

    resolved_backend = backend or load_mock_backend_or_http(config)
    no_wait = isinstance(resolved_backend, MockBackend)
    gateway = Gateway(
        resolved_backend,
        sleep=(lambda _: None) if no_wait else time.sleep,
        trace_path=out / "gateway.jsonl",
    )
    moa_config = _resolve_moa(config, base_dir)

    tasks = ["A", "B"] if config.task == "A-then-B" else [config.task]
    selectors = {t: ExemplarSelector(config, train, t) for t in tasks}

    failures: list[dict] = []
    records: list[PredictionRecord] = []

    def process(thread: Thread) -> list[PredictionRecord]:
        results: list[PredictionRecord] = []
        spans_for_b: list[LabeledSpan] | None = None
        if "A" in tasks:
            if (thread.id, "A") not in done:
                raw = _complete_task_a(
                    gateway, config, moa_config, thread, selectors["A"].for_thread(thread), trace_path
                )
                spans, warnings = parse_spans(raw, thread, policy="lenient")
                results.append(
                    PredictionRecord(thread.id, "A", spans=spans, warnings=warnings)
                )
                spans_for_b = spans
        if "B" in tasks:
            if (thread.id, "B") in done:
                return results
            if config.task == "A-then-B":
                if spans_for_b is None:
                    spans_for_b = []
                spans = spans_for_b
            else:
                spans = [
                    LabeledSpan(s.text, s.label, s.answer_index, s.start, s.end)
                    for s in thread.gold_spans
                ]
            if not spans:
                results.append(
                    PredictionRecord(
                        thread.id, "B", warnings=["no spans available for summarization"]
                    )
                )
                return results
            raw = _complete_task_b(
                gateway, config, moa_config, thread, spans, selectors["B"].for_thread(thread), trace_path
            )
            summaries, warnings = parse_summaries(raw)
            results.append(
                PredictionRecord(thread.id, "B", summaries=summaries, warnings=warnings)
            )
        return results

    with ThreadPoolExecutor(max_workers=max(1, config.workers)) as pool:
        futures = {pool.submit(process, t): t for t in eval_threads}
        for future, thread in futures.items():
            try:
                records.extend(future.result())
            except (GatewayError, PipelineError, click.ClickException) as exc:
                failures.append({"thread_id": thread.id, "error": str(exc)})

    # deterministic output order regardless of worker scheduling
    order = {t.id: i for i, t in enumerate(eval_threads)}
    records.sort(key=lambda r: (order[r.thread_id], r.task))
    with open(predictions_path, "a", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")

    metadata = {
        "config": dataclasses.asdict(config),
        "official_split_sizes": OFFICIAL_SPLIT_SIZES,
        "eval_threads": len(eval_threads),
        "completed": len(records),
        "failures": failures,
    }
    (out / "metadata.json").write_text(
        json.dumps(metadata, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    return out


def _is_mock(config: RunConfig) -> bool:
    if config.setting == "moa":
        return True  # endpoint scheme decides at call time; mock:// is the default
    return (config.agent or {}).get("endpoint", "mock://local").startswith("mock://")


def load_mock_backend_or_http(config: RunConfig):
    from persum.gateway import HttpBackend

    if _is_mock(config):
        raise click.ClickException(
            "mock endpoints require --mock with a script file"
        )
    return HttpBackend()


def _evaluate_to_dir(
    gold: list[Thread],
    predictions: list[PredictionRecord],
    out: Path,
    scorer: str | None,
    model: str = "-",
    setting: str = "-",
) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    report: dict = {}
    tables = []
    a_records = [r for r in predictions if r.task == "A"]
    b_records = [r for r in predictions if r.task == "B"]
    if a_records:
        report_a = evaluate_task_a(gold, a_records)
        report["task_a"] = report_a.to_json()
        tables.append(
            "Task A\n"
            + render_task_a_table([(model, setting, report_a.metric_values(), report_a.overall)])
        )
        with open(out / "confusion.csv", "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["gold\\pred"] + [p.value for p in Perspective])
            for p, row in zip(Perspective, report_a.confusion):
                writer.writerow([p.value] + list(row))
            writer.writerow(["misses", report_a.confusion_misses])
    if b_records:
        external = None
        if scorer:
            by_id = {r.thread_id: r for r in b_records}
            pairs = []
            for thread in gold:
                record = by_id.get(thread.id)
                pred_summaries = record.summaries if record else {}
                for p in Perspective:
                    if p in thread.gold_summaries or p in pred_summaries:
                        pairs.append(
                            (
                                "\n".join(thread.answers),
                                thread.gold_summaries.get(p, ""),
                                pred_summaries.get(p, ""),
                            )
                        )
            external = external_scores(pairs, scorer)
        report_b = evaluate_task_b(gold, b_records, external)
        report["task_b"] = report_b.to_json()
        tables.append(
            "Task B\n"
            + render_task_b_table([(model, setting, report_b.metric_values(), report_b.overall)])
        )
    (out / "report.json").write_text(
        json.dumps(report, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    (out / "report.txt").write_text("\n\n".join(tables) + "\n", encoding="utf-8")
    return report


@click.group()
def main() -> None:
    """Perspective-aware summarization pipeline driver."""


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--mock", "mock_path", type=click.Path(exists=True), default=None)
@click.option("--limit", type=int, default=None)
def run_command(config_path: str, mock_path: str | None, limit: int | None) -> None:
    """Run a Task A / Task B pipeline over a corpus under a named setting."""
    config = RunConfig.load(config_path)
    if limit is not None:
        config.limit = limit
    backend = load_mock_backend(mock_path) if mock_path else None
    out = execute_run(config, backend=backend, base_dir=Path(config_path).parent)
    metadata = json.loads((out / "metadata.json").read_text(encoding="utf-8"))
    click.echo(f"run complete: {out} ({metadata['completed']} records, "
               f"{len(metadata['failures'])} failures)")
    if metadata["failures"]:
        sys.exit(1)


@main.command("evaluate")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--gold", "gold_path", required=True, type=click.Path(exists=True))
@click.option("--scorer", default=None)
@click.option("--out", "out_dir", default=None, type=click.Path())
@click.option("--model", default="-")
@click.option("--setting", default="-")
def evaluate_command(pred_path, gold_path, scorer, out_dir, model, setting) -> None:
    """Score a predictions file against a gold corpus."""
    gold = load_corpus(gold_path)
    predictions = read_predictions(pred_path)
    out = Path(out_dir) if out_dir else Path(pred_path).parent
    try:
        report = _evaluate_to_dir(gold, predictions, out, scorer, model, setting)
    except EvaluationError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo((out / "report.txt").read_text(encoding="utf-8"))
    overall_a = report.get("task_a", {}).get("overall")
    if overall_a is not None:
        click.echo(f"Task A overall: {overall_a:.4f}")


def _build_cell_config(base: MoaConfig, layers: int, proposers: str) -> MoaConfig:
    proposer_agents = base.layers[0].agents
    if proposers == "single":
        first = proposer_agents[0]
        proposer_agents = tuple(
            dataclasses.replace(first, name=f"{first.name}-p{i}")
            for i in range(len(base.layers[0].agents))
        )
    specs = [LayerSpec(Role.PROPOSE, proposer_agents, base.layers[0].role_prompt)]
    refine_agent = base.layers[1].agents if len(base.layers) > 1 else (base.aggregator,)
    if layers >= 2:
        specs.append(LayerSpec(Role.VERIFY, tuple(refine_agent)))
    if layers >= 3:
        check_agent = base.layers[2].agents if len(base.layers) > 2 else (base.aggregator,)
        specs.append(LayerSpec(Role.HALLUCINATION_CHECK, tuple(check_agent)))
    return dataclasses.replace(base, layers=tuple(specs))


@main.command("sweep-layers")
@click.option("--base", "base_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--mock", "mock_path", type=click.Path(exists=True), default=None)
def sweep_layers_command(base_path: str, config_path: str, mock_path: str | None) -> None:
    """Run the layer-count x proposer-mix ablation grid."""
    base = load_moa_config(base_path)
    run_config = RunConfig.load(config_path)
    backend = load_mock_backend(mock_path) if mock_path else None
    out_root = Path(run_config.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)

    gold = load_corpus(run_config.corpus, run_config.schema)
    eval_threads = _select_split(gold, run_config.split)
    summary_rows = []
    for layers in (1, 2, 3):
        for proposers in ("single", "multi"):
            cell = f"{layers}layer-{proposers}"
            cell_dir = out_root / cell
            try:
                moa_cell = _build_cell_config(base, layers, proposers)
                gateway = Gateway(
                    backend if backend is not None else load_mock_backend_or_http(run_config),
                    sleep=lambda _: None,
                )
                cell_dir.mkdir(parents=True, exist_ok=True)
                records = []
                for thread in eval_threads[: run_config.limit]:
                    final, _ = run_pipeline(
                        gateway, moa_cell, thread,
                        spans=None if moa_cell.task == "A" else [
                            LabeledSpan(s.text, s.label, s.answer_index, s.start, s.end)
                            for s in thread.gold_spans
                        ],
                        trace_path=cell_dir / "traces.jsonl",
                    )
                    if moa_cell.task == "A":
                        spans, warnings = parse_spans(final, thread)
                        records.append(PredictionRecord(thread.id, "A", spans=spans, warnings=warnings))
                    else:
                        summaries, warnings = parse_summaries(final)
                        records.append(
                            PredictionRecord(thread.id, "B", summaries=summaries, warnings=warnings)
                        )
                write_predictions(records, cell_dir / "predictions.jsonl")
                report = _evaluate_to_dir(gold, records, cell_dir, scorer=None)
                overall = report.get("task_a", {}).get("overall") or report.get(
                    "task_b", {}
                ).get("overall")
                summary_rows.append(
                    {"cell": cell, "layers": layers, "proposers": proposers,
                     "status": "ok", "overall": overall}
                )
            except (PipelineError, GatewayError, EvaluationError, click.ClickException) as exc:
                summary_rows.append(
                    {"cell": cell, "layers": layers, "proposers": proposers,
                     "status": "failed", "error": str(exc)}
                )
    (out_root / "summary.json").write_text(
        json.dumps(summary_rows, indent=2) + "\n", encoding="utf-8"
    )
    with open(out_root / "chart.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["series", "layers", "overall"])
        for row in summary_rows:
            if row["status"] == "ok" and row["overall"] is not None:
                writer.writerow([row["proposers"], row["layers"], f"{row['overall']:.4f}"])
        for name, value in run_config.baselines.items():
            for layers in (1, 2, 3):
                writer.writerow([f"baseline:{name}", layers, f"{float(value):.4f}"])
    click.echo(f"sweep complete: {out_root} ({len(summary_rows)} cells)")


if __name__ == "__main__":  # pragma: no cover
    main()
