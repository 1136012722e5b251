"""Acceptance suite: one test per release criterion.

Each test prints a PASS/FAIL line through the conftest terminal-summary
hook. Paper-scale headline numbers are not targets here; acceptance is
property- and oracle-based at desk scale.
"""

import itertools
import json
import random
import time
from multiprocessing import Pool
from pathlib import Path

import numpy as np
import pytest

from counterspeech import harness
from counterspeech.corpus import OutcomeExample

from counterspeech.human_eval import (
    AnnotationTask,
    EvalStore,
    agreement_rate,
)
from counterspeech.metrics import (
    OneHotEmbedder,
    bert_score_tokens,
    bleu_tokens,
    meteor_tokens,
    rouge_tokens,
    stem,
)
from counterspeech.outcome_classifier import (
    INCIVILITY_TASK,
    REENTRY_TASK,
    OutcomePrediction,
    evaluate_classifier,
    majority_baseline,
    train_classifier,
)
from counterspeech.policy import PpoSample, PpoUpdateConfig, TinyPolicy
from counterspeech.strategies import (
    RewardConfig,
    TrlConfig,
    kl_penalty,
    method_grid,
    select_candidate,
    total_reward,
    trl_train,
)
from oracles import (
    oracle_bleu,
    oracle_meteor,
    oracle_rouge_l,
    oracle_rouge_n,
    oracle_select,
)
from test_harness import build_corpus, train_controllers
from test_outcome_classifier import separable_examples

ALPHABET = ("a", "b", "c")
SEQS = [tuple()] + [
    t for n in range(1, 7) for t in itertools.product(ALPHABET, repeat=n)
]
ORACLE_TOLERANCE = 1e-12


def _check_candidate_rows(cand_indices):
    """Worker: compare impl vs oracles for every reference, given candidates."""
    mismatches = 0
    for ci in cand_indices:
        cand = SEQS[ci]
        for ref in SEQS:
            if abs(bleu_tokens(cand, [ref]) - oracle_bleu(cand, [ref])) > ORACLE_TOLERANCE:
                mismatches += 1
            got = rouge_tokens(cand, ref)
            for n, triple in ((1, got.rouge_1), (2, got.rouge_2)):
                p, r, f1 = oracle_rouge_n(cand, ref, n)
                if (
                    abs(triple.precision - p) > ORACLE_TOLERANCE
                    or abs(triple.recall - r) > ORACLE_TOLERANCE
                    or abs(triple.f1 - f1) > ORACLE_TOLERANCE
                ):
                    mismatches += 1
            p, r, f1 = oracle_rouge_l(cand, ref)
            if (
                abs(got.rouge_l.precision - p) > ORACLE_TOLERANCE
                or abs(got.rouge_l.recall - r) > ORACLE_TOLERANCE
                or abs(got.rouge_l.f1 - f1) > ORACLE_TOLERANCE
            ):
                mismatches += 1
            if abs(meteor_tokens(cand, ref) - oracle_meteor(cand, ref, stem)) > ORACLE_TOLERANCE:
                mismatches += 1
    return mismatches


def test_metric_oracle_equivalence_exhaustive():
    """bleu/rouge/meteor match brute-force oracles on all token pairs of
    length <= 6 over a 3-symbol alphabet, in under two minutes."""
    start = time.time()
    workers = 2
    chunks = [range(worker, len(SEQS), workers) for worker in range(workers)]
    with Pool(workers) as pool:
        mismatches = sum(pool.map(_check_candidate_rows, chunks))
    elapsed = time.time() - start
    assert mismatches == 0
    assert elapsed < 120, f"exhaustive sweep took {elapsed:.0f}s"


def test_metric_fixed_points():
    tokens = ("the", "reply", "stands", "firm")
    assert bleu_tokens(tokens, [tokens]) == pytest.approx(1.0, abs=1e-9)
    scores = rouge_tokens(tokens, tokens)
    assert scores.rouge_1.f1 == pytest.approx(1.0, abs=1e-9)
    assert scores.rouge_2.f1 == pytest.approx(1.0, abs=1e-9)
    assert scores.rouge_l.f1 == pytest.approx(1.0, abs=1e-9)
    assert bert_score_tokens(tokens, tokens, OneHotEmbedder()).f1 == pytest.approx(
        1.0, abs=1e-9
    )
    disjoint_a, disjoint_b = ("alpha", "beta"), ("gamma", "delta")
    assert bleu_tokens(disjoint_a, [disjoint_b]) == 0.0
    disjoint_scores = rouge_tokens(disjoint_a, disjoint_b)
    assert disjoint_scores.rouge_1.f1 == 0.0
    assert disjoint_scores.rouge_2.f1 == 0.0
    assert meteor_tokens(("single",), ("single",)) == 0.5


def test_reward_algebra():
    rng = random.Random(20240817)
    config_task = INCIVILITY_TASK
    for _ in range(1000):
        r = rng.uniform(0, 1)
        kl = rng.uniform(0, 10)
        beta = rng.uniform(0, 5)
        breakdown = total_reward(r, kl, RewardConfig(target_task=config_task, beta=beta))
        assert abs(breakdown.total - (r - beta * kl)) <= 1e-12
    logprobs = [rng.uniform(-8, 0) for _ in range(50)]
    assert kl_penalty(logprobs, list(logprobs)) == 0.0
    zero_beta = RewardConfig(target_task=REENTRY_TASK, beta=0.0)
    for _ in range(100):
        r, kl = rng.uniform(0, 1), rng.uniform(0, 10)
        assert total_reward(r, kl, zero_beta).total == r


VOCAB = ["peace", "calm", "respect", "listen", "please", "stop", "hate", "noise"]


class _MarkerClassifier:
    task = INCIVILITY_TASK

    def predict(self, hate_text, reply_text):
        hit = "peace" in reply_text.split()
        low = 1.0 if hit else 0.0
        conf = {"high": (1 - low) / 2, "medium": (1 - low) / 2, "low": low}
        label = "low" if hit else "high"
        return OutcomePrediction("incivility", label, conf)


def test_ppo_noop_and_learning():
    # exact no-op on a zero-advantage batch
    policy = TinyPolicy(VOCAB)
    before = policy.weights.tobytes()
    samples = [
        PpoSample(
            prompt="stop",
            response="peace calm",
            old_logprobs=tuple(policy.logprobs("stop", "peace calm")),
            advantage=0.0,
        ),
        PpoSample(
            prompt="stop",
            response="hate noise",
            old_logprobs=tuple(policy.logprobs("stop", "hate noise")),
            advantage=0.0,
        ),
    ]
    policy.ppo_update(samples, PpoUpdateConfig())
    assert policy.weights.tobytes() == before

    # toy TRL run learns to emit the rewarded marker token, three seeds
    start = time.time()
    for seed in (1, 2, 3):
        base = TinyPolicy(VOCAB)
        config = TrlConfig(
            reward=RewardConfig(target_task=INCIVILITY_TASK, beta=0.02),
            prompts=["stop the noise", "hate hate noise", "please stop"],
            max_steps=150,
            batch_size=16,
            learning_rate=1.0,
            seed=seed,
            max_new_tokens=6,
            stop_window=10**6,
        )
        _, log = trl_train(base, _MarkerClassifier(), config)
        assert len(log) <= 500
        gain = log[-1].mean_total - log[0].mean_total
        assert gain >= 0.2, f"seed {seed}: mean total reward gain {gain:.3f} < 0.2"
    assert time.time() - start < 300


def test_selection_oracle():
    rng = random.Random(31337)
    cases = 0
    while cases < 10_000:
        size = rng.randint(1, 8)
        candidates = []
        for i in range(size):
            is_target = rng.random() < 0.5
            confidence = rng.uniform(0.34, 0.99)
            label = "low" if is_target else "high"
            conf = {l: (1 - confidence) / 2 for l in INCIVILITY_TASK.labels}
            conf[label] = confidence
            total = sum(conf.values())
            conf = {l: v / total for l, v in conf.items()}
            candidates.append((f"text{i}", OutcomePrediction("incivility", label, conf)))
        expected = oracle_select(candidates, "low")
        seed = rng.randint(0, 2**30)
        got = select_candidate(candidates, "low", random.Random(seed))
        if expected is not None:
            assert got == expected
        else:
            assert got == random.Random(seed).randrange(size)
        cases += 1


def test_classifier_sanity():
    train = separable_examples(300)
    test = separable_examples(100, offset=5000)
    handle = train_classifier(train, INCIVILITY_TASK)
    report = evaluate_classifier(handle, test, INCIVILITY_TASK)
    baseline = majority_baseline(
        [ex.incivility_label for ex in train], test, INCIVILITY_TASK
    )
    assert report.weighted.f1 >= 0.90
    assert report.weighted.f1 > baseline.weighted.f1

    # majority-baseline arithmetic at the published class proportions
    def proportioned(task, proportions):
        examples = []
        i = 0
        for label, fraction in zip(task.labels, proportions):
            for _ in range(round(fraction * 1000)):
                kwargs = (
                    {"incivility_label": label}
                    if task.name == "incivility"
                    else {"reentry_label": label}
                )
                examples.append(
                    OutcomeExample(id=f"pp{i}", hate_text="h", reply_text=f"r {i}", **kwargs)
                )
                i += 1
        return examples

    incivility_test = proportioned(INCIVILITY_TASK, (0.21, 0.49, 0.30))
    incivility_report = majority_baseline(["medium"], incivility_test, INCIVILITY_TASK)
    assert round(incivility_report.weighted.f1, 2) == 0.32

    reentry_test = proportioned(REENTRY_TASK, (0.30, 0.21, 0.49))
    reentry_report = majority_baseline(["nonhate_reentry"], reentry_test, REENTRY_TASK)
    # the published baseline row for reentry averages without support weights
    assert round(reentry_report.macro.f1, 2) == 0.22


def test_end_to_end_determinism(tmp_path):
    corpus_path = tmp_path / "corpus.jsonl"
    build_corpus(corpus_path)
    classifier_paths = train_controllers(tmp_path)

    def run(name):
        config = harness.ExperimentConfig(
            methods=["baseline_generation", "effective_top5_select_effective"],
            corpus_path=str(corpus_path),
            classifier_paths=classifier_paths,
            out_dir=str(tmp_path / name),
            gateway={"kind": "scripted", "refusal_modulus": 4},
            seed=424242,
        )
        return harness.run_experiment(config), Path(config.out_dir)

    report_a, out_a = run("first")
    report_b, out_b = run("second")
    for rel in (
        "runs/baseline_generation/samples.jsonl",
        "runs/effective_top5_select_effective/samples.jsonl",
        "reports/summary.csv",
    ):
        assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes(), rel

    # desired counts equal an independent recount over persisted records
    classifiers = harness.load_classifiers(classifier_paths)
    corpus_records = harness.load_corpus(str(corpus_path), "synthetic")
    hate_texts = {
        item.hate_id: item.hate_text
        for item in harness.generation_inputs(corpus_records)
    }
    for method in report_a.methods:
        persisted = harness.load_generations(
            out_a / "runs" / method.method / "generations.jsonl"
        )
        recount_incivility = harness.count_desired(
            persisted, classifiers["incivility"], "low", hate_texts
        )
        recount_reentry = harness.count_desired(
            persisted, classifiers["reentry"], "nonhate_reentry", hate_texts
        )
        assert recount_incivility == method.desired_counts["incivility"]
        assert recount_reentry == method.desired_counts["reentry"]


def test_method_grid_completeness():
    expected = [
        "baseline_generation",
        "effective_generation",
        "reentry_generation",
        "baseline_top5_select_effective",
        "effective_top5_select_effective",
        "reentry_top5_select_effective",
        "baseline_top5_select_reentry",
        "effective_top5_select_reentry",
        "reentry_top5_select_reentry",
        "baseline_top10_select_effective",
        "effective_top10_select_effective",
        "reentry_top10_select_effective",
        "baseline_top10_select_reentry",
        "effective_top10_select_reentry",
        "reentry_top10_select_reentry",
        "effective_finetune",
        "reentry_finetune",
        "conan_finetune",
        "multiconan_finetune",
        "bm_reddit_finetune",
        "bm_gab_finetune",
        "effective_trl",
        "reentry_trl",
        "bm_reddit_finetune_effective_trl",
        "bm_reddit_finetune_reentry_trl",
    ]
    grid = method_grid()
    assert grid == expected
    assert len(grid) == 25


def test_human_eval_math_and_blinding(tmp_path):
    # scripted 10-task session for two annotators with known disagreements
    tasks = [
        AnnotationTask(
            task_id=f"task-{i:04d}",
            hate_text=f"hate {i}",
            reply_text=f"reply {i}",
            hidden_method="effective_trl" if i % 2 else "conan_finetune",
            display_order=i,
        )
        for i in range(10)
    ]
    store = EvalStore(tmp_path / "store", ["a1", "a2"], clock=lambda: "t")
    store.add_tasks(tasks)

    # a1 answers yes everywhere; a2 flips suitableness on 2 tasks and
    # effectiveness on 5 tasks -> agreement 0.8 / 1.0 / 0.5
    for i in range(10):
        task_id = f"task-{i:04d}"
        store.submit_label(task_id, "a1", "yes", "yes", "yes")
        store.submit_label(
            task_id,
            "a2",
            "no" if i < 2 else "yes",
            "yes",
            "no" if i < 5 else "yes",
        )
    report = store.agreement()
    assert report.per_dimension["suitableness"] == pytest.approx(0.8)
    assert report.per_dimension["relevance"] == pytest.approx(1.0)
    assert report.per_dimension["effectiveness"] == pytest.approx(0.5)
    assert sorted(report.disagreements["suitableness"]) == ["task-0000", "task-0001"]
    assert len(report.disagreements["effectiveness"]) == 5

    # agreement is symmetric in its two label sets
    labels_a = {t: store.labels[(t, "a1")] for t in (f"task-{i:04d}" for i in range(10))}
    labels_b = {t: store.labels[(t, "a2")] for t in (f"task-{i:04d}" for i in range(10))}
    assert (
        agreement_rate(labels_a, labels_b).per_dimension
        == agreement_rate(labels_b, labels_a).per_dimension
    )

    # adjudicate every disagreement: suitableness -> yes, effectiveness -> no
    for task_id in report.disagreements["suitableness"]:
        store.adjudicate(task_id, "suitableness", "yes", "agreed on style fit")
    for task_id in report.disagreements["effectiveness"]:
        store.adjudicate(task_id, "effectiveness", "no", "agreed unlikely to work")

    summary = store.summarize()
    # hand computation: tasks 1,3,5,7,9 are effective_trl; 0,2,4,6,8 conan_finetune
    # suitableness: all yes after adjudication -> 1.0 for both methods
    # effectiveness: tasks 0-4 adjudicated no; trl tasks 1,3 no; 5,7,9 yes
    assert summary["effective_trl"]["suitableness"] == pytest.approx(1.0)
    assert summary["conan_finetune"]["suitableness"] == pytest.approx(1.0)
    assert summary["effective_trl"]["effectiveness"] == pytest.approx(3 / 5)
    assert summary["conan_finetune"]["effectiveness"] == pytest.approx(2 / 5)
    assert summary["effective_trl"]["relevance"] == pytest.approx(1.0)

    # blinding: every serialized annotator payload lacks any method marker
    fresh = EvalStore(tmp_path / "blind", ["b1", "b2"], clock=lambda: "t")
    fresh.add_tasks(tasks)
    forbidden = (b"effective_trl", b"conan_finetune", b"hidden_method", b"method")
    for annotator in ("b1", "b2"):
        while True:
            payload = fresh.next_task(annotator)
            raw = json.dumps(payload).encode()
            for marker in forbidden:
                assert marker not in raw
            if payload.get("done"):
                break
            fresh.submit_label(payload["task_id"], annotator, "yes", "yes", "yes")
