"""Acceptance gate: one test per top-level criterion, each printing a PASS line.

These run offline with the mock gateway backend and the deterministic
embedding stub only; no network or neural runtime is required.
"""

import itertools
import json
import math
import random
import time
from collections import Counter

import numpy as np
import pytest
from click.testing import CliRunner

from persum.cli import main
from persum.corpus import PERSPECTIVE_ORDER, GoldSpan
from persum.exemplars import kmeans, select_exemplars
from persum.gateway import AgentSpec, Gateway, MockBackend, fingerprint
from persum.metrics import (
    PRF,
    TASK_A_METRICS,
    TASK_B_METRICS,
    bleu,
    meteor,
    rouge,
    span_match,
    task_a_overall,
    task_b_overall,
)
from persum.moa import LayerSpec, MoaConfig, Role, run_pipeline
from persum.ner_prep import (
    bio_align,
    class_weights,
    tokenize_with_offsets,
    validate_bio,
    weighted_cross_entropy,
)
from persum.parsing import (
    LabeledSpan,
    parse_spans,
    parse_summaries,
    serialize_spans,
    serialize_summaries,
)
from persum.prompting import build_task_a_prompt, build_task_b_prompt
from tests.conftest import DATA

TOLERANCE = 5e-4

# Reference evaluation rows used as regression targets: the eight sub-metric
# values per row and the Overall column they must reproduce.
SPAN_ROWS = [
    ("Llama-3.1 70B", "zero-shot", (0.5381, 0.7299, 0.0320, 0.1218, 0.0507, 0.4530, 0.6991, 0.5498), 0.3968),
    ("Llama-3.1 70B", "3-shot curated", (0.5390, 0.7265, 0.0339, 0.1240, 0.0513, 0.4665, 0.7163, 0.5673), 0.4031),
    ("Llama-3.1 70B", "3-shot clustered", (0.5697, 0.7676, 0.0385, 0.1311, 0.0565, 0.4954, 0.7404, 0.5974), 0.4246),
    ("Llama-3.1 70B", "fine-tuned", (0.4788, 0.6584, 0.0256, 0.1158, 0.0447, 0.4216, 0.6681, 0.5184), 0.3664),
    ("GPT-4o", "zero-shot", (0.8949, 0.9190, 0.1756, 0.2641, 0.2110, 0.6578, 0.7392, 0.6961), 0.5697),
    ("GPT-4o", "3-shot curated", (0.8176, 0.8479, 0.1552, 0.2193, 0.1818, 0.6145, 0.7124, 0.6599), 0.5261),
    ("GPT-4o", "3-shot clustered", (0.8553, 0.8723, 0.1468, 0.2546, 0.1862, 0.6810, 0.7525, 0.7150), 0.5580),
    ("MoA", "best-1", (0.8129, 0.8478, 0.1491, 0.2072, 0.1734, 0.5512, 0.6942, 0.6145), 0.5063),
    ("MoA", "best-2", (0.7682, 0.7809, 0.1443, 0.1697, 0.1560, 0.5412, 0.6512, 0.5912), 0.4753),
]
SUMMARY_ROWS = [
    ("Llama-3.1 70B", "zero-shot", (0.2476, 0.0886, 0.2156, 0.0471, 0.2777, 0.8182, 0.3096, 0.2247), 0.2786),
    ("Llama-3.1 70B", "3-shot curated", (0.2583, 0.0968, 0.2241, 0.0487, 0.2891, 0.7612, 0.2864, 0.2345), 0.2749),
    ("Llama-3.1 70B", "3-shot clustered", (0.2733, 0.0994, 0.2398, 0.0817, 0.3055, 0.8295, 0.3151, 0.2498), 0.2993),
    ("Llama-3.1 70B", "fine-tuned", (0.2165, 0.0778, 0.1947, 0.0315, 0.2460, 0.7960, 0.2486, 0.2033), 0.2518),
    ("GPT-4o", "zero-shot", (0.4704, 0.2340, 0.4038, 0.1307, 0.4289, 0.9116, 0.4615, 0.3031), 0.4180),
    ("GPT-4o", "3-shot curated", (0.4519, 0.2291, 0.3825, 0.1193, 0.3701, 0.8821, 0.4212, 0.2543), 0.3888),
    ("GPT-4o", "3-shot clustered", (0.4515, 0.2524, 0.4057, 0.1212, 0.3987, 0.8901, 0.4552, 0.2812), 0.4070),
    ("MoA", "best-1", (0.4372, 0.2103, 0.3611, 0.1025, 0.3305, 0.8558, 0.3913, 0.2614), 0.3688),
    ("MoA", "best-2", (0.4192, 0.2055, 0.3502, 0.1096, 0.3206, 0.8512, 0.3608, 0.2853), 0.3628),
]


def test_overall_score_reproduction():
    started = time.perf_counter()
    for model, setting, values, expected in SPAN_ROWS:
        got = task_a_overall(dict(zip(TASK_A_METRICS, values)))
        assert got == pytest.approx(expected, abs=TOLERANCE), (model, setting, got)
    for model, setting, values, expected in SUMMARY_ROWS:
        got = task_b_overall(dict(zip(TASK_B_METRICS, values)))
        assert got == pytest.approx(expected, abs=TOLERANCE), (model, setting, got)
    elapsed = time.perf_counter() - started
    assert elapsed < 1.0
    print(f"\nPASS overall-score reproduction: 18/18 rows within {TOLERANCE} ({elapsed:.3f}s)")


def _max_one_to_one(gold, pred):
    # exhaustive maximum one-to-one matching over the strict-equality graph
    edges = [
        [g_i for g_i, g in enumerate(gold)
         if p.label is g.label and p.answer_index == g.answer_index
         and p.start == g.start and p.end == g.end]
        for p in pred
    ]

    best = 0
    for assignment in itertools.product(*[e + [None] for e in edges]) if pred else [()]:
        used = [a for a in assignment if a is not None]
        if len(used) == len(set(used)):
            best = max(best, len(used))
    return best


def test_span_matching_against_bruteforce_oracle():
    started = time.perf_counter()
    rng = random.Random(20240917)
    labels = list(PERSPECTIVE_ORDER)
    checked = 0
    for _ in range(1000):
        gold = []
        for _ in range(rng.randint(0, 4)):
            start = rng.randrange(0, 40)
            gold.append(
                GoldSpan(rng.randrange(0, 2), start, start + rng.randint(1, 15),
                         "", rng.choice(labels))
            )
        pred = []
        for _ in range(rng.randint(0, 4)):
            if gold and rng.random() < 0.5:
                g = rng.choice(gold)
                # exact copy or an offset/label perturbation
                start = g.start + rng.choice([0, 0, 1, -1])
                end = max(start + 1, g.end + rng.choice([0, 0, 2]))
                label = g.label if rng.random() < 0.8 else rng.choice(labels)
                pred.append(LabeledSpan("", label, g.answer_index, max(0, start), end))
            else:
                start = rng.randrange(0, 40)
                pred.append(
                    LabeledSpan("", rng.choice(labels), rng.randrange(0, 2),
                                start, start + rng.randint(1, 15))
                )
        gold_fixed = [GoldSpan(g.answer_index, g.start, g.end, "x" * (g.end - g.start), g.label)
                      for g in gold]
        strict = span_match(gold_fixed, pred, "strict")
        expected_tp = _max_one_to_one(gold_fixed, pred)
        if not gold_fixed and not pred:
            assert strict == PRF(1.0, 1.0, 1.0)
        else:
            expected_p = expected_tp / len(pred) if pred else 0.0
            expected_r = expected_tp / len(gold_fixed) if gold_fixed else 0.0
            assert strict.precision == pytest.approx(expected_p)
            assert strict.recall == pytest.approx(expected_r)
        proportional = span_match(gold_fixed, pred, "proportional")
        assert proportional.precision >= strict.precision - 1e-12
        assert proportional.recall >= strict.recall - 1e-12
        checked += 1
    elapsed = time.perf_counter() - started
    assert checked == 1000 and elapsed < 30.0
    print(f"\nPASS span-matching oracle: 1000/1000 instances agree with brute force ({elapsed:.2f}s)")


def _reference_bleu(ref_text, hyp_text):
    # independent implementation: same smoothing convention, different code path
    import re

    split = re.compile(r"[^\W_]+", re.UNICODE)
    ref = split.findall(ref_text.lower())
    hyp = split.findall(hyp_text.lower())
    if not ref and not hyp:
        return 1.0
    if not ref or not hyp:
        return 0.0
    product = 1.0
    for n in (1, 2, 3, 4):
        hyp_ngrams = Counter(tuple(hyp[i:i + n]) for i in range(len(hyp) - n + 1))
        ref_ngrams = Counter(tuple(ref[i:i + n]) for i in range(len(ref) - n + 1))
        denominator = sum(hyp_ngrams.values())
        if denominator == 0:
            p_n = 1.0
        else:
            numerator = sum(min(c, ref_ngrams[g]) for g, c in hyp_ngrams.items())
            p_n = numerator / denominator if numerator > 0 else 1 / (denominator + 1)
        product *= p_n
    score = product ** 0.25
    if len(hyp) < len(ref):
        score *= math.exp(1 - len(ref) / len(hyp))
    return score


BLEU_PAIRS = [
    ("stress and poor sleep trigger migraines", "stress and poor sleep trigger migraines"),
    ("stress and poor sleep trigger migraines", "poor sleep and stress trigger migraines"),
    ("daily ibuprofen can damage the stomach lining over time", "ibuprofen can damage the stomach"),
    ("it is suggested that you see a neurologist", "you should see a neurologist"),
    ("eating more fiber lowers cholesterol", "eating fiber lowers cholesterol levels"),
    ("hot water strips natural oils from the skin", "cold water is refreshing"),
    ("early symptoms include thirst and fatigue", "symptoms include fatigue"),
    ("a fasting glucose test is recommended", "a fasting glucose test is recommended if worried"),
    ("keeping a sleep diary helped a lot", "keeping a diary helped"),
    ("one two three four five six seven", "one two three"),
]


def test_lexical_metric_checks():
    assert rouge("the cat sat", "the cat", 1) == pytest.approx(0.8, abs=1e-6)
    identity = "statins lower cholesterol levels in most patients"
    assert rouge(identity, identity, 1) == pytest.approx(1.0)
    assert rouge(identity, identity, 2) == pytest.approx(1.0)
    assert rouge(identity, identity, "L") == pytest.approx(1.0)
    assert bleu(identity, identity) == pytest.approx(1.0)
    for ref, hyp in BLEU_PAIRS:
        assert bleu(ref, hyp) == pytest.approx(_reference_bleu(ref, hyp), abs=1e-3), (ref, hyp)
    ten = "one two three four five six seven eight nine ten"
    assert meteor(ten, ten) == pytest.approx(0.9995, abs=1e-4)
    print("\nPASS lexical metrics: ROUGE hand case, identities, 10/10 BLEU oracle pairs, METEOR formula case")


def test_token_classification_math():
    rng = random.Random(5)
    for _ in range(100):
        counts = {f"c{i}": rng.randint(1, 500) for i in range(rng.randint(1, 11))}
        cw = class_weights(counts)
        for tag, count in counts.items():
            assert cw.weights[tag] * count == pytest.approx(cw.total_tokens, rel=1e-12)

    cw = class_weights({"a": 1, "b": 4})  # weight for "a" is 5
    loss = weighted_cross_entropy([[0.0, 0.0]], [0], cw)
    assert loss == pytest.approx(3.4657, abs=1e-4)

    np_rng = np.random.default_rng(6)
    cw3 = class_weights({"a": 2, "b": 3, "c": 5})
    logits = np_rng.normal(0, 3, (20, 3))
    labels = np_rng.integers(0, 3, 20).tolist()
    base = weighted_cross_entropy(logits.tolist(), labels, cw3)
    for offset in (-500.0, 123.456, 1e4):
        shifted = weighted_cross_entropy((logits + offset).tolist(), labels, cw3)
        assert shifted == pytest.approx(base, abs=1e-6)

    text = " ".join(f"tok{i}" for i in range(30))
    tokens = tokenize_with_offsets(text)
    for _ in range(200):
        spans = []
        for _ in range(rng.randint(0, 5)):
            start = rng.randrange(0, len(text) - 2)
            end = rng.randrange(start + 1, min(len(text), start + 40) + 1)
            spans.append(GoldSpan(0, start, end, text[start:end], rng.choice(PERSPECTIVE_ORDER)))
        tags = bio_align(tokens, spans)
        assert validate_bio(tags), (spans, tags)
    print("\nPASS token-classification math: weight invariant (100), loss hand case, shift invariance, BIO validity (200)")


def test_exemplar_selection_recovers_planted_clusters():
    recovered = 0
    for trial in range(100):
        rng = np.random.default_rng(1000 + trial)
        sigma = 0.5
        separation = 10 * sigma  # centers 10x the within-cluster radius apart
        direction = rng.normal(0, 1, 4)
        direction /= np.linalg.norm(direction)
        center = direction * separation / 2
        vectors = {}
        for i in range(6):
            vectors[f"a{i}"] = (rng.normal(0, sigma, 4) + center).tolist()
        for i in range(6):
            vectors[f"b{i}"] = (rng.normal(0, sigma, 4) - center).tolist()
        clustering = kmeans(vectors, k=2, seed=trial)
        groups = {}
        for identifier, cluster in clustering.assignment.items():
            groups.setdefault(identifier[0], set()).add(cluster)
        if len(groups["a"]) == 1 and len(groups["b"]) == 1 and groups["a"] != groups["b"]:
            recovered += 1
        chosen = select_exemplars(clustering, (center * 1.1).tolist(), 2, vectors)
        assert len(set(chosen)) == 2
        assert clustering.assignment[chosen[0]] != clustering.assignment[chosen[1]]
        again = kmeans(vectors, k=2, seed=trial)
        assert again.assignment == clustering.assignment
        assert select_exemplars(again, (center * 1.1).tolist(), 2, vectors) == chosen
    assert recovered == 100
    print("\nPASS exemplar selection: planted partition recovered in 100/100 trials, selection deterministic")


def _moa_agent(name, model="llama-70b"):
    return AgentSpec(name=name, model_id=model)


def test_moa_structural_suite(tmp_path, threads):
    started = time.perf_counter()
    config = MoaConfig(
        layers=(
            LayerSpec(Role.PROPOSE, tuple(_moa_agent(f"p{i}", m) for i, m in
                                          enumerate(["llama-70b", "llama-70b", "qwen-72b", "qwen-72b"]))),
            LayerSpec(Role.VERIFY, (_moa_agent("verifier"),)),
        ),
        aggregator=_moa_agent("agg"),
        aggregator_prompt="Fuse the candidates.",
        task="A",
    )
    defaults = {f"p{i}": f"proposal-{i}" for i in range(4)}
    defaults.update(verifier="verified-output", agg="fused-final")
    gateway = Gateway(MockBackend(agent_defaults=defaults), sleep=lambda _: None)
    final, trace = run_pipeline(gateway, config, threads[0])
    cardinalities = [len(layer.outputs) for layer in trace.layers] + [1]
    assert cardinalities == [4, 1, 1]
    assert final == "fused-final"
    for output in trace.layers[-1].outputs:
        assert output in trace.aggregator_input

    three = MoaConfig(
        layers=(
            LayerSpec(Role.PROPOSE, (_moa_agent("p0"), _moa_agent("p1"))),
            LayerSpec(Role.VERIFY, (_moa_agent("verifier"),)),
            LayerSpec(Role.HALLUCINATION_CHECK, (_moa_agent("checker"),)),
        ),
        aggregator=_moa_agent("agg"),
        aggregator_prompt="",
        task="A",
    )
    defaults["checker"] = "checked-output"
    gateway = Gateway(MockBackend(agent_defaults=defaults), sleep=lambda _: None)
    _, trace3 = run_pipeline(gateway, three, threads[0])
    assert [l.role for l in trace3.layers] == ["PROPOSE", "VERIFY", "HALLUCINATION_CHECK"]

    base_path = tmp_path / "moa.json"
    base_path.write_text(json.dumps({
        "task": "A",
        "layers": [{"role": "PROPOSE", "agents": [
            {"name": "llama", "model_id": "llama-70b"},
            {"name": "qwen", "model_id": "qwen-72b"},
        ]}],
        "aggregator": {"name": "agg", "model_id": "llama-70b"},
    }))
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps({
        "corpus": str(DATA / "fixture_corpus.json"),
        "task": "A",
        "setting": "moa",
        "moa": "moa.json",
        "output_dir": str(tmp_path / "sweep"),
        "limit": 2,
    }))
    mock_path = tmp_path / "mock.json"
    mock_path.write_text(json.dumps({"contains": [{
        "needle": "Format your response as: span:",
        "text": 'span: "Stress and poor sleep are common triggers for migraines.", label: "CAUSE"',
    }]}))
    result = CliRunner().invoke(main, [
        "sweep-layers", "--base", str(base_path), "--config", str(config_path),
        "--mock", str(mock_path),
    ])
    assert result.exit_code == 0, result.output
    summary = json.loads((tmp_path / "sweep" / "summary.json").read_text())
    assert len(summary) == 6
    assert {(r["layers"], r["proposers"]) for r in summary} == {
        (l, p) for l in (1, 2, 3) for p in ("single", "multi")
    }
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0
    print(f"\nPASS MoA structural suite: trace (4,1,1), roles in order, 6 sweep cells ({elapsed:.2f}s)")


def test_parser_robustness(threads):
    rng = random.Random(99)
    alphabet = 'span:"label,EXPERIENCE Summary \n\t{}[]<>abcdefg “”‘’-*0123456789'
    for _ in range(10_000):
        raw = "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 120)))
        spans, _ = parse_spans(raw)
        assert isinstance(spans, list)
        summaries, _ = parse_summaries(raw)
        assert isinstance(summaries, dict)

    with open(DATA / "parser_cases.jsonl") as handle:
        cases = [json.loads(line) for line in handle]
    assert len(cases) == 50
    hits = 0
    for case in cases:
        spans, _ = parse_spans(case["raw"])
        got = [(s.text, s.label.value) for s in spans]
        if got == [(e["text"], e["label"]) for e in case["expected"]]:
            hits += 1
    assert hits == 50

    for thread in threads:
        spans = [LabeledSpan(s.text, s.label) for s in thread.gold_spans]
        parsed, _ = parse_spans(serialize_spans(spans))
        assert parsed == spans
        summaries, _ = parse_summaries(serialize_summaries(thread.gold_summaries))
        assert summaries == thread.gold_summaries
    print("\nPASS parser robustness: 10000-case fuzz clean, 50/50 fixture recall, gold round-trips")


def test_end_to_end_pipeline_and_report(tmp_path, threads):
    fingerprints = {}
    for thread in threads:
        a_text = serialize_spans([LabeledSpan(s.text, s.label) for s in thread.gold_spans])
        fingerprints[fingerprint("solo", build_task_a_prompt(thread))] = {"text": a_text}
        spans, _ = parse_spans(a_text, thread, policy="lenient")
        fingerprints[fingerprint("solo", build_task_b_prompt(thread, spans))] = {
            "text": serialize_summaries(thread.gold_summaries)
        }
    mock_path = tmp_path / "mock.json"
    mock_path.write_text(json.dumps({"fingerprints": fingerprints}))
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps({
        "corpus": str(DATA / "fixture_corpus.json"),
        "task": "A-then-B",
        "setting": "zero-shot",
        "output_dir": str(tmp_path / "run"),
        "agent": {"name": "solo", "model_id": "test-model"},
    }))
    runner = CliRunner()
    result = runner.invoke(main, ["run", "--config", str(config_path), "--mock", str(mock_path)])
    assert result.exit_code == 0, result.output
    predictions = tmp_path / "run" / "predictions.jsonl"
    assert predictions.exists()
    assert len(predictions.read_text().strip().splitlines()) == 10
    gateway_trace = tmp_path / "run" / "gateway.jsonl"
    assert gateway_trace.exists() and gateway_trace.read_text().strip()

    result = runner.invoke(main, [
        "evaluate", "--pred", str(predictions),
        "--gold", str(DATA / "fixture_corpus.json"),
    ])
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "run" / "report.json").read_text())
    assert report["task_a"]["overall"] == pytest.approx(1.0)
    tables = (tmp_path / "run" / "report.txt").read_text().splitlines()
    a_header = tables[1].split("\t")
    assert a_header == ["Model", "Setting", *TASK_A_METRICS, "Overall"]
    print("\nPASS end-to-end: A-then-B run produced predictions, traces, and a report; gold-equals-pred overall 1.0")
