"""Command-line surface for the counterspeech toolkit."""

from __future__ import annotations

import argparse
import json
import sys

from pathlib import Path

from . import harness, human_eval, strategies
from .corpus import load_corpus, load_outcomes, split_corpus, write_corpus
from .exceptions import ConfigurationError
from .outcome_classifier import (
    TASKS,
    BagOfFeaturesClassifier,
    TrainingConfig,
    evaluate_classifier,
    example_label,
    majority_baseline,
    train_classifier,
)
from .policy import FinetuneConfig, TinyPolicy
from .strategies import (
    RewardConfig,
    TrlConfig,
    finetune,
    finetune_spec,
    prepare_finetune_dataset,
    trl_method,
    trl_train,
    write_finetune_dataset,
    write_trl_log,
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args) or 0
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="counterspeech")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("ingest", help="normalize a source file into corpus.jsonl")
    p.add_argument("--format", required=True)
    p.add_argument("--in", dest="input_path", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="assign deterministic train/test splits")
    p.add_argument("--in", dest="input_path", required=True)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", help="output path (defaults to --in)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train-classifier", help="train an outcome controller")
    p.add_argument("--task", choices=("incivility", "reentry"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("eval-classifier", help="per-class/weighted P,R,F1 report")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval_classifier)

    p = sub.add_parser("generate", help="generate replies for one method")
    p.add_argument("--method", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--gateway", required=True, help="config JSON with gateway/classifiers/policies")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("finetune", help="supervised-train a local policy")
    p.add_argument("--dataset", choices=strategies.FINETUNE_DATASETS, required=True)
    p.add_argument("--corpus", help="normalized corpus.jsonl for pass-through datasets")
    p.add_argument("--outcomes", help="outcomes.jsonl for outcome-filtered datasets")
    p.add_argument("--base", help="base policy artifact (fresh policy if omitted)")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--out", required=True)
    p.add_argument("--dataset-out", help="also persist the prompt/completion pairs as JSONL")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("trl", help="reinforcement-learn a local policy")
    p.add_argument("--target", choices=("effective", "reentry"), required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--base", help="base policy artifact (fresh policy if omitted)")
    p.add_argument("--corpus", required=True, help="prompts come from the training split")
    p.add_argument("--classifier", required=True, help="reward controller artifact")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="per-step reward CSV")
    p.set_defaults(func=cmd_trl)

    p = sub.add_parser("evaluate", help="classify and score a persisted run")
    p.add_argument("--run", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="config JSON (defaults to <run>/config.json)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="re-emit summary files for a run")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("experiment", help="run the full generate/evaluate pipeline")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("human-eval", help="blinded human evaluation service")
    he = p.add_subparsers(dest="subcommand")

    ps = he.add_parser("sample", help="draw annotation tasks from persisted runs")
    ps.add_argument("--runs", required=True, help="experiment out dir with runs/<method>/")
    ps.add_argument("--corpus", required=True)
    ps.add_argument("--k", type=int, default=50)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--store", required=True, help="store directory to initialize")
    ps.set_defaults(func=cmd_human_eval_sample)

    pv = he.add_parser("serve", help="serve the annotation API (and UI when built)")
    pv.add_argument("--store", required=True)
    pv.add_argument("--annotators", default="a1,a2")
    pv.add_argument("--host", default="127.0.0.1")
    pv.add_argument("--port", type=int, default=8765)
    pv.add_argument("--ui", help="directory with built UI assets")
    pv.set_defaults(func=cmd_human_eval_serve)

    pe = he.add_parser("export", help="export labels, adjudications, and summary")
    pe.add_argument("--store", required=True)
    pe.add_argument("--annotators", default="a1,a2")
    pe.add_argument("--out", required=True)
    pe.set_defaults(func=cmd_human_eval_export)

    return parser


def cmd_ingest(args) -> int:
    records = load_corpus(args.input_path, args.format)
    write_corpus(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_split(args) -> int:
    records = load_corpus(args.input_path, "synthetic")
    train, test = split_corpus(records, args.train_fraction, args.seed)
    out = args.out or args.input_path
    write_corpus(train + test, out)
    print(f"split {len(records)} records into {len(train)} train / {len(test)} test -> {out}")
    return 0


def cmd_train_classifier(args) -> int:
    task = TASKS[args.task]
    examples = load_outcomes(args.data)
    examples = [
        ex
        for ex in examples
        if (ex.incivility_label if task.name == "incivility" else ex.reentry_label) is not None
    ]
    config = TrainingConfig(epochs=args.epochs, learning_rate=args.learning_rate)
    model = train_classifier(examples, task, config)
    model.save(args.out)
    print(
        f"trained {args.task} classifier on {len(examples)} examples; "
        f"loss {model.loss_history[0]:.4f} -> {model.loss_history[-1]:.4f}; saved to {args.out}"
    )
    return 0


def _print_report(title: str, report) -> None:
    print(title)
    print(f"{'class':<18}{'P':>8}{'R':>8}{'F1':>8}{'support':>9}")
    for label, prf in report.per_class.items():
        print(
            f"{label:<18}{prf.precision:>8.2f}{prf.recall:>8.2f}{prf.f1:>8.2f}"
            f"{report.support[label]:>9}"
        )
    w, m = report.weighted, report.macro
    print(f"{'weighted':<18}{w.precision:>8.2f}{w.recall:>8.2f}{w.f1:>8.2f}")
    print(f"{'macro':<18}{m.precision:>8.2f}{m.recall:>8.2f}{m.f1:>8.2f}")


def cmd_eval_classifier(args) -> int:
    model = BagOfFeaturesClassifier.load(args.model)
    task = model.task
    examples = [
        ex
        for ex in load_outcomes(args.data)
        if (ex.incivility_label if task.name == "incivility" else ex.reentry_label) is not None
    ]
    baseline = majority_baseline([example_label(ex, task) for ex in examples], examples, task)
    _print_report(f"majority baseline ({task.name})", baseline)
    print()
    report = evaluate_classifier(model, examples, task)
    _print_report(f"classifier ({task.name})", report)
    return 0


def _config_from_gateway_file(path: str, methods, corpus, out_dir) -> harness.ExperimentConfig:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return harness.ExperimentConfig(
        methods=list(methods),
        corpus_path=corpus,
        classifier_paths=raw.get("classifiers", {}),
        out_dir=out_dir,
        gateway=raw.get("gateway", {"kind": "scripted"}),
        policies=raw.get("policies", {}),
        params=raw.get("params", {}),
        seed=raw.get("seed", 0),
    )


def cmd_generate(args) -> int:
    config = _config_from_gateway_file(args.gateway, [args.method], args.corpus, args.out)
    records = load_corpus(config.corpus_path, "synthetic")
    hate_inputs = harness.generation_inputs(records)
    classifiers = (
        harness.load_classifiers(config.classifier_paths) if config.classifier_paths else {}
    )
    generations = harness.generate_for_method(args.method, hate_inputs, config, classifiers)
    out = Path(args.out)
    harness.write_generations(generations, out / "runs" / args.method / "generations.jsonl")
    (out / "config.json").write_text(
        json.dumps(
            {
                "classifiers": config.classifier_paths,
                "gateway": config.gateway,
                "policies": config.policies,
                "params": config.params,
                "seed": config.seed,
            },
            indent=2,
            sort_keys=True,
        ),
        encoding="utf-8",
    )
    valid = sum(1 for g in generations if g.valid)
    print(f"{args.method}: {len(generations)} generations, {valid} valid -> {out}")
    return 0


def _policy_from_corpus_vocab(paths: list[str | Path]) -> TinyPolicy:
    from .metrics import tokenize

    vocab: dict[str, None] = {}
    for path in paths:
        if path is None:
            continue
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            for key in ("hate_text", "reply_text"):
                if row.get(key):
                    for tok in tokenize(row[key]):
                        vocab[tok] = None
    if not vocab:
        raise ConfigurationError("no vocabulary tokens found in the given files")
    return TinyPolicy(sorted(vocab))


def cmd_finetune(args) -> int:
    spec = finetune_spec(args.dataset)
    corpora = {}
    outcome_data = []
    if args.corpus:
        records = load_corpus(args.corpus, "synthetic")
        for rec in records:
            corpora.setdefault(rec.source, []).append(rec)
    if args.outcomes:
        outcome_data = load_outcomes(args.outcomes)
    dataset = prepare_finetune_dataset(spec, corpora, outcome_data)
    if args.dataset_out:
        write_finetune_dataset(dataset, args.dataset_out)
    base = (
        TinyPolicy.load(args.base)
        if args.base
        else _policy_from_corpus_vocab([args.corpus, args.outcomes])
    )
    trained = finetune(base, dataset, FinetuneConfig(epochs=args.epochs))
    trained.save(args.out)
    history = trained.last_loss_history
    print(
        f"{args.dataset}_finetune on {len(dataset)} pairs; "
        f"loss {history[0]:.4f} -> {history[-1]:.4f}; saved to {args.out}"
    )
    return 0


def cmd_trl(args) -> int:
    records = load_corpus(args.corpus, "synthetic")
    prompts = [rec.hate_text for rec in records if rec.split == "train"]
    if not prompts:
        prompts = [rec.hate_text for rec in records]
    classifier = BagOfFeaturesClassifier.load(args.classifier)
    base = TinyPolicy.load(args.base) if args.base else _policy_from_corpus_vocab([args.corpus])
    config = TrlConfig(
        reward=RewardConfig(target_task=classifier.task, beta=args.beta),
        prompts=prompts,
        max_steps=args.steps,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        seed=args.seed,
    )
    trained, log = trl_train(base, classifier, config)
    trained.save(args.out)
    if args.log:
        write_trl_log(log, args.log)
    name = trl_method(args.target, base=None)
    if log:
        print(
            f"{name}: {len(log)} steps, mean total reward "
            f"{log[0].mean_total:.3f} -> {log[-1].mean_total:.3f}; saved to {args.out}"
        )
    else:
        print(f"{name}: 0 steps; saved base policy to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run)
    config_path = Path(args.config) if args.config else run_dir / "config.json"
    raw = json.loads(config_path.read_text(encoding="utf-8")) if config_path.exists() else {}
    classifiers = harness.load_classifiers(raw.get("classifiers", {}))
    corpus_records = load_corpus(args.references, "synthetic")
    hate_texts = {
        item.hate_id: item.hate_text for item in harness.generation_inputs(corpus_records)
    }
    references = harness.reference_lookup(corpus_records)
    embedder = harness.build_embedder(raw.get("embedder"))
    out = Path(args.out)
    reports = []
    for generations_path in sorted(run_dir.glob("runs/*/generations.jsonl")):
        method = generations_path.parent.name
        records = harness.load_generations(generations_path)
        rows, report = harness.evaluate_method(
            records, hate_texts, references, classifiers, embedder
        )
        report.method = method
        harness.write_samples(rows, out / "runs" / method / "samples.jsonl")
        reports.append(report)
    if not reports:
        raise ConfigurationError(f"no runs found under {run_dir}")
    run_report = harness.RunReport(methods=reports, out_dir=str(out))
    harness.emit_report(run_report, out)
    print(f"evaluated {len(reports)} methods -> {out}")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    report_path = run_dir / "report.json"
    if not report_path.exists():
        raise ConfigurationError(f"{report_path} not found; run evaluate first")
    payload = json.loads(report_path.read_text(encoding="utf-8"))
    print(f"{'method':<40}{'valid%':>8}{'inciv':>7}{'reentry':>9}")
    for method in payload["methods"]:
        rate = method["valid_response_rate"]
        counts = method.get("desired_counts", {})
        print(
            f"{method['method']:<40}{rate * 100:>7.0f}%"
            f"{counts.get('incivility', 0):>7}{counts.get('reentry', 0):>9}"
        )
    return 0


def cmd_experiment(args) -> int:
    config = harness.ExperimentConfig.from_file(args.config)
    report = harness.run_experiment(config)
    failed = [m.method for m in report.methods if m.failed]
    print(f"experiment complete: {len(report.methods)} methods -> {config.out_dir}")
    if failed:
        print(f"failed methods: {', '.join(failed)}")
    return 0


def cmd_human_eval_sample(args) -> int:
    runs_dir = Path(args.runs)
    runs = {}
    for path in sorted(runs_dir.glob("runs/*/generations.jsonl")):
        runs[path.parent.name] = harness.load_generations(path)
    if not runs:
        raise ConfigurationError(f"no runs found under {runs_dir}")
    corpus_records = load_corpus(args.corpus, "synthetic")
    hate_texts = {rec.id: rec.hate_text for rec in corpus_records}
    tasks = human_eval.sample_for_annotation(runs, hate_texts, k=args.k, seed=args.seed)
    store_dir = Path(args.store)
    store_dir.mkdir(parents=True, exist_ok=True)
    human_eval.write_tasks(tasks, store_dir / "tasks.jsonl")
    print(f"sampled {len(tasks)} tasks from {len(runs)} methods -> {store_dir}")
    return 0


def cmd_human_eval_serve(args) -> int:
    store = human_eval.EvalStore(args.store, args.annotators.split(","))
    server = human_eval.build_server(store, host=args.host, port=args.port, ui_dir=args.ui)
    print(f"serving on http://{args.host}:{server.server_port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_human_eval_export(args) -> int:
    store = human_eval.EvalStore(args.store, args.annotators.split(","))
    paths = store.export(args.out)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
