"""End-to-end experiment orchestration.

Runs the generate -> classify -> count -> score -> report pipeline across a
method grid, persisting per-sample artifacts before any aggregation so that
evaluation is re-runnable offline. Generation is reference-blind: the test
split's reply texts are loaded only after every method's generations are on
disk.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import metrics
from .corpus import CorpusRecord, load_corpus
from .exceptions import ConfigurationError
from .gateway import (
    ChatBackend,
    GenerationParams,
    GenerationRecord,
    HttpChatBackend,
    LocalPolicyBackend,
    ScriptedBackend,
    is_valid_response,
    valid_response_rate,
)
from .metrics import (
    EmbeddingProvider,
    HeuristicAcceptabilityScorer,
    HttpEmbedder,
    OneHotEmbedder,
)
from .outcome_classifier import (
    INCIVILITY_TASK,
    REENTRY_TASK,
    BagOfFeaturesClassifier,
    OutcomeClassifier,
)
from .policy import TinyPolicy
from .strategies import parse_method_name, prompt_and_select, prompt_with_instruction

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = (
    "method",
    "n_samples",
    "valid_response_rate",
    "desired_incivility",
    "desired_reentry",
    "bleu_mean",
    "bleu_std",
    "rouge_1_f_mean",
    "rouge_2_f_mean",
    "rouge_l_f_mean",
    "meteor_mean",
    "meteor_std",
    "bertscore_f1_mean",
    "bertscore_f1_std",
    "gruen_grammaticality_mean",
    "gruen_redundancy_mean",
    "gruen_focus_mean",
    "gruen_overall_mean",
    "ttr",
    "distinct_1",
    "distinct_2",
    "new_unigrams",
    "new_bigrams",
)

CORRELATION_METRICS = ("bleu", "rouge_l_f", "meteor", "bertscore_f1", "gruen_overall")


@dataclass(frozen=True)
class HateInput:
    """Generation-stage view of one hate comment: no reference replies."""

    hate_id: str
    hate_text: str


@dataclass
class ExperimentConfig:
    methods: list[str]
    corpus_path: str
    classifier_paths: dict[str, str]
    out_dir: str
    gateway: dict = field(default_factory=lambda: {"kind": "scripted"})
    policies: dict[str, str] = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    seed: int = 0
    annotation_k: int = 50

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            methods=raw["methods"],
            corpus_path=raw["corpus"],
            classifier_paths=raw["classifiers"],
            out_dir=raw["out_dir"],
            gateway=raw.get("gateway", {"kind": "scripted"}),
            policies=raw.get("policies", {}),
            params=raw.get("params", {}),
            seed=raw.get("seed", 0),
            annotation_k=raw.get("annotation_k", 50),
        )

    def generation_params(self, **overrides) -> GenerationParams:
        values = dict(self.params)
        values.update(overrides)
        return GenerationParams(**values)


@dataclass
class MethodReport:
    method: str
    n_samples: int
    valid_response_rate: float
    desired_counts: dict[str, int]
    aggregates: dict[str, tuple[float, float]]
    diversity: dict[str, float]
    novelty: dict[str, int]
    failed: bool = False
    error: str | None = None


@dataclass
class RunReport:
    methods: list[MethodReport]
    out_dir: str

    def by_method(self) -> dict[str, MethodReport]:
        return {m.method: m for m in self.methods}


def seed_for(stage: str, base_seed: int) -> int:
    """Stable named sub-seed so stages can be re-run in isolation."""
    digest = hashlib.sha256(f"{base_seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


# ---------------------------------------------------------------------------
# Backends from configuration
# ---------------------------------------------------------------------------

_MOCK_WORDS = (
    "please", "consider", "another", "view", "people", "deserve", "respect",
    "here", "facts", "matter", "listen", "kindly", "together", "community",
    "voices", "count",
)


def mock_reply_script(user: str, index: int, seed: int | None) -> str:
    """Deterministic pseudo-reply with sentence structure for quality scoring."""
    digest = hashlib.sha256(f"{seed}:{user}:{index}".encode("utf-8")).digest()
    words = [_MOCK_WORDS[b % len(_MOCK_WORDS)] for b in digest[:6]]
    return (
        f"{' '.join(words[:3]).capitalize()}. "
        f"{' '.join(words[3:]).capitalize()} in this thread."
    )


def make_mock_script(refusal_modulus: int | None):
    def script(user: str, index: int, seed: int | None) -> str:
        if refusal_modulus:
            digest = hashlib.sha256(f"{seed}:{user}:{index}".encode("utf-8")).digest()
            if digest[-1] % refusal_modulus == 0:
                return "I cannot respond to that."
        return mock_reply_script(user, index, seed)

    return script


def build_backend(config: Mapping, policies: Mapping[str, str] | None = None) -> ChatBackend:
    kind = config.get("kind", "scripted")
    if kind == "scripted":
        return ScriptedBackend(script=make_mock_script(config.get("refusal_modulus")))
    if kind == "http":
        return HttpChatBackend(
            endpoint_env=config.get("endpoint_env", "COUNTERSPEECH_LLM_ENDPOINT"),
            token_env=config.get("token_env", "COUNTERSPEECH_LLM_TOKEN"),
            timeout=config.get("timeout", 60.0),
            fan_out=config.get("fan_out", False),
            max_in_flight=config.get("max_in_flight", 4),
        )
    if kind == "local":
        return LocalPolicyBackend(TinyPolicy.load(config["policy"]))
    raise ConfigurationError(f"unknown gateway kind {kind!r}")


def build_embedder(config: Mapping | None = None) -> EmbeddingProvider:
    config = config or {}
    if config.get("kind", "one_hot") == "one_hot":
        return OneHotEmbedder()
    return HttpEmbedder(config["endpoint"])


# ---------------------------------------------------------------------------
# Corpus views
# ---------------------------------------------------------------------------

def generation_inputs(records: Sequence[CorpusRecord]) -> list[HateInput]:
    """Unique hate comments of the test split, reply texts deliberately dropped."""
    inputs: list[HateInput] = []
    seen: dict[str, str] = {}
    for rec in records:
        if rec.split != "test":
            continue
        if rec.hate_text in seen:
            continue
        seen[rec.hate_text] = rec.id
        inputs.append(HateInput(hate_id=rec.id, hate_text=rec.hate_text))
    if not inputs:
        raise ConfigurationError("corpus has no test-split records")
    return inputs


def reference_lookup(records: Sequence[CorpusRecord]) -> dict[str, list[str]]:
    """hate_id -> all test-split reference replies for that hate comment."""
    by_text: dict[str, list[str]] = {}
    id_by_text: dict[str, str] = {}
    for rec in records:
        if rec.split != "test" or not rec.reply_text:
            continue
        id_by_text.setdefault(rec.hate_text, rec.id)
        by_text.setdefault(rec.hate_text, []).append(rec.reply_text)
    return {id_by_text[text]: replies for text, replies in by_text.items()}


# ---------------------------------------------------------------------------
# Generation stage
# ---------------------------------------------------------------------------

def generate_for_method(
    method: str,
    hate_inputs: Sequence[HateInput],
    config: ExperimentConfig,
    classifiers: Mapping[str, OutcomeClassifier],
    backend: ChatBackend | None = None,
) -> list[GenerationRecord]:
    parsed = parse_method_name(method)
    records: list[GenerationRecord] = []
    if parsed.kind in ("instruction", "select"):
        backend = backend or build_backend(config.gateway)
        for item in hate_inputs:
            params = config.generation_params(
                seed=seed_for(f"{method}:{item.hate_id}", config.seed)
            )
            record = CorpusRecord(
                id=item.hate_id, hate_text=item.hate_text, reply_text=None, source="synthetic"
            )
            if parsed.kind == "instruction":
                records.append(
                    prompt_with_instruction(record, parsed.condition, params, backend)
                )
            else:
                task = INCIVILITY_TASK if parsed.selector == "effective" else REENTRY_TASK
                rng = random.Random(seed_for(f"{method}:{item.hate_id}:fallback", config.seed))
                records.append(
                    prompt_and_select(
                        record,
                        parsed.condition,
                        parsed.n,
                        task,
                        params,
                        backend,
                        classifiers[task.name],
                        rng,
                    )
                )
    else:  # finetune / trl methods sample a trained policy on the raw hate text
        artifact = config.policies.get(method)
        if artifact is None:
            raise ConfigurationError(f"no policy artifact configured for method {method}")
        policy_backend = LocalPolicyBackend(TinyPolicy.load(artifact))
        for item in hate_inputs:
            params = config.generation_params(
                seed=seed_for(f"{method}:{item.hate_id}", config.seed), n_candidates=1
            )
            text = policy_backend.complete("", item.hate_text, params)[0]
            records.append(
                GenerationRecord(
                    hate_id=item.hate_id,
                    method=method,
                    text=text,
                    valid=is_valid_response(text),
                    params=params,
                )
            )
    return records


def write_generations(records: Sequence[GenerationRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(generation_to_dict(rec), sort_keys=True, ensure_ascii=False) + "\n")


def generation_to_dict(rec: GenerationRecord) -> dict:
    return {
        "hate_id": rec.hate_id,
        "method": rec.method,
        "text": rec.text,
        "valid": rec.valid,
        "params": {
            "top_k": rec.params.top_k,
            "temperature": rec.params.temperature,
            "max_length": rec.params.max_length,
            "n_candidates": rec.params.n_candidates,
            "seed": rec.params.seed,
        },
        "candidates": [list(c) for c in rec.candidates] if rec.candidates else None,
    }


def generation_from_dict(row: Mapping) -> GenerationRecord:
    return GenerationRecord(
        hate_id=row["hate_id"],
        method=row["method"],
        text=row["text"],
        valid=row["valid"],
        params=GenerationParams(**row["params"]),
        candidates=tuple(tuple(c) for c in row["candidates"]) if row.get("candidates") else None,
    )


def load_generations(path: str | Path) -> list[GenerationRecord]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(generation_from_dict(json.loads(line)))
    return records


# ---------------------------------------------------------------------------
# Counting and evaluation
# ---------------------------------------------------------------------------

def pick_methods_for_human_eval(report: RunReport) -> list[str]:
    """One method per family, the one with the most low-incivility replies."""
    best: dict[str, MethodReport] = {}
    for method in report.methods:
        if method.failed:
            continue
        kind = parse_method_name(method.method).kind
        count = method.desired_counts.get("incivility", 0)
        if kind not in best or count > best[kind].desired_counts.get("incivility", 0):
            best[kind] = method
    return [best[kind].method for kind in ("instruction", "select", "finetune", "trl") if kind in best]


def count_desired(
    records: Sequence[GenerationRecord],
    classifier: OutcomeClassifier,
    target_label: str,
    hate_texts: Mapping[str, str],
) -> int:
    """Valid generations whose (hate, reply) prediction hits the target label."""
    count = 0
    for rec in records:
        if not rec.valid:
            continue
        prediction = classifier.predict(hate_texts[rec.hate_id], rec.text)
        if prediction.label == target_label:
            count += 1
    return count


def evaluate_method(
    records: Sequence[GenerationRecord],
    hate_texts: Mapping[str, str],
    references: Mapping[str, Sequence[str]],
    classifiers: Mapping[str, OutcomeClassifier],
    embedder: EmbeddingProvider,
    scorer=None,
) -> tuple[list[dict], MethodReport]:
    """Per-sample rows and the aggregated method report."""
    scorer = scorer or HeuristicAcceptabilityScorer()
    rows: list[dict] = []
    desired = {"incivility": 0, "reentry": 0}
    metric_columns: dict[str, list[float]] = {}
    valid_texts: list[str] = []
    for rec in records:
        row = generation_to_dict(rec)
        if rec.valid:
            for task, clf in (("incivility", classifiers["incivility"]), ("reentry", classifiers["reentry"])):
                prediction = clf.predict(hate_texts[rec.hate_id], rec.text)
                row[f"{task}_label"] = prediction.label
                row[f"{task}_confidence"] = prediction.confidence
                desired_label = INCIVILITY_TASK.desired_label if task == "incivility" else REENTRY_TASK.desired_label
                if prediction.label == desired_label:
                    desired[task] += 1
            refs = references.get(rec.hate_id)
            try:
                if refs:
                    relevance = metrics.relevance_scores(rec.text, list(refs), embedder)
                    row["bleu"] = relevance.bleu
                    row["rouge_1_f"] = relevance.rouge.rouge_1.f1
                    row["rouge_2_f"] = relevance.rouge.rouge_2.f1
                    row["rouge_l_f"] = relevance.rouge.rouge_l.f1
                    row["meteor"] = relevance.meteor
                    row["bertscore_precision"] = relevance.bertscore.precision
                    row["bertscore_recall"] = relevance.bertscore.recall
                    row["bertscore_f1"] = relevance.bertscore.f1
                quality = metrics.gruen(rec.text, scorer)
                row["gruen_grammaticality"] = quality.grammaticality
                row["gruen_redundancy"] = quality.redundancy
                row["gruen_focus"] = quality.focus
                row["gruen_overall"] = quality.overall
            except ValueError:
                # tokenizer-empty texts can defeat single metrics; keep the row
                logger.warning("metric scoring failed for %s", rec.hate_id, exc_info=True)
            valid_texts.append(rec.text)
            for name in (
                "bleu", "rouge_1_f", "rouge_2_f", "rouge_l_f", "meteor",
                "bertscore_f1", "gruen_grammaticality", "gruen_redundancy",
                "gruen_focus", "gruen_overall",
            ):
                if name in row:
                    metric_columns.setdefault(name, []).append(row[name])
        rows.append(row)

    aggregates = {
        name: (report.mean, report.std)
        for name, report in (
            (name, metrics.aggregate(values)) for name, values in metric_columns.items()
        )
    }
    if valid_texts:
        diversity = metrics.diversity(valid_texts)
        diversity_values = {
            "ttr": diversity.ttr,
            "distinct_1": diversity.distinct_1,
            "distinct_2": diversity.distinct_2,
        }
        pooled_references = [ref for refs in references.values() for ref in refs]
        novelty = metrics.novelty(valid_texts, pooled_references)
        novelty_values = {
            "new_unigrams": novelty.new_unigrams,
            "new_bigrams": novelty.new_bigrams,
        }
    else:
        diversity_values = {}
        novelty_values = {}
    report = MethodReport(
        method=records[0].method if records else "",
        n_samples=len(records),
        valid_response_rate=valid_response_rate(records) if records else 0.0,
        desired_counts=desired,
        aggregates=aggregates,
        diversity=diversity_values,
        novelty=novelty_values,
    )
    return rows, report


def write_samples(rows: Sequence[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Full experiment
# ---------------------------------------------------------------------------

def load_classifiers(paths: Mapping[str, str]) -> dict[str, OutcomeClassifier]:
    classifiers: dict[str, OutcomeClassifier] = {}
    for task_name in ("incivility", "reentry"):
        if task_name not in paths:
            raise ConfigurationError(f"classifier path for {task_name} missing")
        classifiers[task_name] = BagOfFeaturesClassifier.load(paths[task_name])
    return classifiers


def run_experiment(config: ExperimentConfig) -> RunReport:
    if not config.methods:
        raise ConfigurationError("experiment config lists no methods")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus_records = load_corpus(config.corpus_path, "synthetic")
    hate_inputs = generation_inputs(corpus_records)
    hate_texts = {item.hate_id: item.hate_text for item in hate_inputs}
    classifiers = load_classifiers(config.classifier_paths)

    # Generation phase: reference replies are not loaded yet.
    generated: dict[str, list[GenerationRecord] | Exception] = {}
    for method in config.methods:
        try:
            records = generate_for_method(method, hate_inputs, config, classifiers)
            write_generations(records, out_dir / "runs" / method / "generations.jsonl")
            generated[method] = records
        except Exception as exc:  # noqa: BLE001 - a failed method must not sink the run
            logger.warning("method %s failed during generation", method, exc_info=True)
            generated[method] = exc

    # Evaluation phase: only now read the reference replies.
    references = reference_lookup(corpus_records)
    embedder = build_embedder()
    reports: list[MethodReport] = []
    for method in config.methods:
        outcome = generated[method]
        if isinstance(outcome, Exception):
            reports.append(
                MethodReport(
                    method=method,
                    n_samples=0,
                    valid_response_rate=0.0,
                    desired_counts={},
                    aggregates={},
                    diversity={},
                    novelty={},
                    failed=True,
                    error=str(outcome),
                )
            )
            continue
        try:
            rows, report = evaluate_method(
                outcome, hate_texts, references, classifiers, embedder
            )
            report.method = method
            write_samples(rows, out_dir / "runs" / method / "samples.jsonl")
            reports.append(report)
        except Exception as exc:  # noqa: BLE001
            logger.warning("method %s failed during evaluation", method, exc_info=True)
            reports.append(
                MethodReport(
                    method=method,
                    n_samples=len(outcome),
                    valid_response_rate=0.0,
                    desired_counts={},
                    aggregates={},
                    diversity={},
                    novelty={},
                    failed=True,
                    error=str(exc),
                )
            )

    run_report = RunReport(methods=reports, out_dir=str(out_dir))
    emit_report(run_report, out_dir)
    return run_report


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, int):
        return str(value)
    return f"{value:.10g}"


def emit_report(report: RunReport, out_dir: str | Path) -> dict[str, Path]:
    """Summary CSV, desired-count data + charts, and metric correlations."""
    out_dir = Path(out_dir)
    reports_dir = out_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)

    summary_path = reports_dir / "summary.csv"
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for method in report.methods:
            agg = method.aggregates
            writer.writerow(
                [
                    method.method,
                    method.n_samples,
                    _format(method.valid_response_rate),
                    method.desired_counts.get("incivility", 0),
                    method.desired_counts.get("reentry", 0),
                    _format(agg.get("bleu", (None,))[0]),
                    _format(agg.get("bleu", (None, None))[1]),
                    _format(agg.get("rouge_1_f", (None,))[0]),
                    _format(agg.get("rouge_2_f", (None,))[0]),
                    _format(agg.get("rouge_l_f", (None,))[0]),
                    _format(agg.get("meteor", (None,))[0]),
                    _format(agg.get("meteor", (None, None))[1]),
                    _format(agg.get("bertscore_f1", (None,))[0]),
                    _format(agg.get("bertscore_f1", (None, None))[1]),
                    _format(agg.get("gruen_grammaticality", (None,))[0]),
                    _format(agg.get("gruen_redundancy", (None,))[0]),
                    _format(agg.get("gruen_focus", (None,))[0]),
                    _format(agg.get("gruen_overall", (None,))[0]),
                    _format(method.diversity.get("ttr")),
                    _format(method.diversity.get("distinct_1")),
                    _format(method.diversity.get("distinct_2")),
                    _format(method.novelty.get("new_unigrams")),
                    _format(method.novelty.get("new_bigrams")),
                ]
            )

    counts_path = reports_dir / "desired_counts.csv"
    with open(counts_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "desired_incivility", "desired_reentry"])
        for method in report.methods:
            writer.writerow(
                [
                    method.method,
                    method.desired_counts.get("incivility", 0),
                    method.desired_counts.get("reentry", 0),
                ]
            )

    correlation_path = _emit_correlations(report, reports_dir)
    report_json = out_dir / "report.json"
    payload = {
        "methods": [
            {
                "method": m.method,
                "n_samples": m.n_samples,
                "valid_response_rate": m.valid_response_rate,
                "desired_counts": m.desired_counts,
                "aggregates": {k: list(v) for k, v in m.aggregates.items()},
                "diversity": m.diversity,
                "novelty": m.novelty,
                "failed": m.failed,
                "error": m.error,
            }
            for m in report.methods
        ]
    }
    report_json.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")

    chart_paths = _emit_charts(report, reports_dir)
    outputs = {
        "summary": summary_path,
        "desired_counts": counts_path,
        "report_json": report_json,
        **chart_paths,
    }
    if correlation_path is not None:
        outputs["correlation"] = correlation_path
    return outputs


def _emit_correlations(report: RunReport, reports_dir: Path) -> Path | None:
    columns: dict[str, list[float]] = {name: [] for name in CORRELATION_METRICS}
    for method in report.methods:
        if method.failed:
            continue
        samples_path = Path(report.out_dir) / "runs" / method.method / "samples.jsonl"
        if not samples_path.exists():
            continue
        for line in samples_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            if all(name in row for name in CORRELATION_METRICS):
                for name in CORRELATION_METRICS:
                    columns[name].append(row[name])
    lengths = {len(v) for v in columns.values()}
    if lengths == {0} or min(lengths) < 2:
        return None
    path = reports_dir / "metric_correlation.csv"
    metrics.write_correlation_csv(path, metrics.metric_correlation(columns))
    return path


def _emit_charts(report: RunReport, reports_dir: Path) -> dict[str, Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    methods = [m.method for m in report.methods]
    paths: dict[str, Path] = {}

    fig, ax = plt.subplots(figsize=(max(6, len(methods) * 0.9), 4))
    x = range(len(methods))
    inciv = [m.desired_counts.get("incivility", 0) for m in report.methods]
    reentry = [m.desired_counts.get("reentry", 0) for m in report.methods]
    ax.bar([i - 0.2 for i in x], inciv, width=0.4, label="low incivility")
    ax.bar([i + 0.2 for i in x], reentry, width=0.4, label="non-hateful reentry")
    ax.set_xticks(list(x))
    ax.set_xticklabels(methods, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("replies with desired label")
    ax.legend()
    fig.tight_layout()
    counts_png = reports_dir / "desired_counts.png"
    fig.savefig(counts_png)
    plt.close(fig)
    paths["desired_counts_png"] = counts_png

    fig, ax = plt.subplots(figsize=(max(6, len(methods) * 0.9), 4))
    meteor_means = [m.aggregates.get("meteor", (0.0, 0.0))[0] for m in report.methods]
    bert_means = [m.aggregates.get("bertscore_f1", (0.0, 0.0))[0] for m in report.methods]
    ax.bar([i - 0.2 for i in x], meteor_means, width=0.4, label="METEOR")
    ax.bar([i + 0.2 for i in x], bert_means, width=0.4, label="BERTScore F1")
    ax.set_xticks(list(x))
    ax.set_xticklabels(methods, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("mean score")
    ax.legend()
    fig.tight_layout()
    means_png = reports_dir / "metric_means.png"
    fig.savefig(means_png)
    plt.close(fig)
    paths["metric_means_png"] = means_png
    return paths
