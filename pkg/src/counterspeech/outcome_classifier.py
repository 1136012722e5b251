"""Conversation-outcome classifiers ("controllers").

Two 3-class tasks: incivility level and hater-reentry behavior, both
predicted from a (hate, reply) text pair. The pair, not the reply alone, is
the unit: inputs are concatenated with a reserved separator token.

The classifier sits behind a provider interface with two implementations: a
self-contained bag-of-features softmax model trainable at desk scale, and a
client for an external fine-tuned-transformer service. Headline accuracy is
a non-goal; the controllers only need to beat the majority baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import requests

from .corpus import OutcomeExample
from .exceptions import PredictionError, TrainingError
from .metrics import PRF, tokenize

SEP_TOKEN = "[sep]"

CONFIDENCE_SUM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class OutcomeTask:
    name: str
    labels: tuple[str, str, str]
    desired_label: str

    def __post_init__(self):
        if len(self.labels) != 3:
            raise ValueError("outcome tasks have exactly 3 labels")
        if self.desired_label not in self.labels:
            raise ValueError("desired_label must be one of the task labels")

    @property
    def tag(self) -> str:
        """Method-name tag for this outcome ('effective' for incivility)."""
        return "effective" if self.name == "incivility" else self.name


INCIVILITY_TASK = OutcomeTask("incivility", ("high", "medium", "low"), "low")
REENTRY_TASK = OutcomeTask(
    "reentry", ("hate_reentry", "no_reentry", "nonhate_reentry"), "nonhate_reentry"
)
TASKS = {task.name: task for task in (INCIVILITY_TASK, REENTRY_TASK)}
TASK_BY_TAG = {task.tag: task for task in TASKS.values()}


@dataclass(frozen=True)
class OutcomePrediction:
    task: str
    label: str
    confidence: dict[str, float]

    def __post_init__(self):
        total = sum(self.confidence.values())
        if abs(total - 1.0) > CONFIDENCE_SUM_TOLERANCE:
            raise PredictionError(f"confidence sums to {total}, expected 1")
        if any(not 0.0 <= p <= 1.0 for p in self.confidence.values()):
            raise PredictionError("confidence values must lie in [0,1]")
        if self.label != argmax_label(self.task, self.confidence):
            raise PredictionError("label must be the argmax of the confidence distribution")


def argmax_label(task_name: str, confidence: dict[str, float]) -> str:
    """Highest-confidence label; exact ties break by the task's label order."""
    labels = TASKS[task_name].labels
    best = labels[0]
    for label in labels[1:]:
        if confidence[label] > confidence[best]:
            best = label
    return best


@dataclass(frozen=True)
class ClassifierReport:
    per_class: dict[str, PRF]
    weighted: PRF
    macro: PRF
    support: dict[str, int]


class OutcomeClassifier(Protocol):
    task: OutcomeTask

    def predict(self, hate_text: str, reply_text: str) -> OutcomePrediction: ...


@dataclass
class TrainingConfig:
    epochs: int = 60
    learning_rate: float = 0.5
    l2: float = 1e-4
    min_learning_rate: float = 1e-8


def example_label(example: OutcomeExample, task: OutcomeTask) -> str:
    label = example.incivility_label if task.name == "incivility" else example.reentry_label
    if label is None:
        raise TrainingError(f"example {example.id} carries no {task.name} label")
    return label


class BagOfFeaturesClassifier:
    """Softmax regression over bag-of-words counts of 'hate [sep] reply'."""

    def __init__(
        self,
        task: OutcomeTask,
        vocabulary: Sequence[str],
        weights: np.ndarray,
        bias: np.ndarray,
        loss_history: Sequence[float] = (),
    ):
        self.task = task
        self.vocabulary = list(vocabulary)
        self._index = {tok: i for i, tok in enumerate(self.vocabulary)}
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.loss_history = tuple(loss_history)

    def _features(self, hate_text: str, reply_text: str) -> np.ndarray:
        vec = np.zeros(len(self.vocabulary))
        for tok in tokenize(hate_text) + [SEP_TOKEN] + tokenize(reply_text):
            idx = self._index.get(tok)
            if idx is not None:
                vec[idx] += 1.0
        return vec

    def predict(self, hate_text: str, reply_text: str) -> OutcomePrediction:
        if not hate_text or not hate_text.strip():
            raise PredictionError("hate_text must be non-empty")
        if not reply_text or not reply_text.strip():
            raise PredictionError("reply_text must be non-empty")
        logits = self.weights @ self._features(hate_text, reply_text) + self.bias
        probs = _softmax(logits)
        confidence = {label: float(p) for label, p in zip(self.task.labels, probs)}
        return OutcomePrediction(
            task=self.task.name,
            label=argmax_label(self.task.name, confidence),
            confidence=confidence,
        )

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        artifact = {
            "format_version": 1,
            "task": {
                "name": self.task.name,
                "labels": list(self.task.labels),
                "desired_label": self.task.desired_label,
            },
            "vocabulary": self.vocabulary,
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "loss_history": list(self.loss_history),
        }
        path.write_text(json.dumps(artifact), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BagOfFeaturesClassifier":
        artifact = json.loads(Path(path).read_text(encoding="utf-8"))
        task = OutcomeTask(
            artifact["task"]["name"],
            tuple(artifact["task"]["labels"]),
            artifact["task"]["desired_label"],
        )
        return cls(
            task=task,
            vocabulary=artifact["vocabulary"],
            weights=np.asarray(artifact["weights"]),
            bias=np.asarray(artifact["bias"]),
            loss_history=artifact.get("loss_history", ()),
        )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def train_classifier(
    examples: Sequence[OutcomeExample],
    task: OutcomeTask,
    config: TrainingConfig | None = None,
) -> BagOfFeaturesClassifier:
    """Full-batch gradient descent with backtracking on the epoch loss.

    Backtracking keeps the training loss monotone: an epoch whose step would
    increase the loss is retried at half the learning rate.
    """
    config = config or TrainingConfig()
    if not examples:
        raise TrainingError("cannot train on an empty example set")
    labels = [example_label(ex, task) for ex in examples]
    if len(set(labels)) < 2:
        raise TrainingError("training set must contain at least 2 distinct labels")

    vocab = sorted(
        {SEP_TOKEN}
        | {tok for ex in examples for tok in tokenize(ex.hate_text) + tokenize(ex.reply_text)}
    )
    model = BagOfFeaturesClassifier(
        task=task,
        vocabulary=vocab,
        weights=np.zeros((len(task.labels), len(vocab))),
        bias=np.zeros(len(task.labels)),
    )
    features = np.stack([model._features(ex.hate_text, ex.reply_text) for ex in examples])
    label_index = {label: i for i, label in enumerate(task.labels)}
    targets = np.zeros((len(examples), len(task.labels)))
    for row, label in enumerate(labels):
        targets[row, label_index[label]] = 1.0

    def loss_of(weights: np.ndarray, bias: np.ndarray) -> float:
        probs = _softmax(features @ weights.T + bias)
        nll = -np.log(np.clip((probs * targets).sum(axis=1), 1e-12, None)).mean()
        return float(nll + 0.5 * config.l2 * (weights**2).sum())

    weights, bias = model.weights, model.bias
    lr = config.learning_rate
    history = [loss_of(weights, bias)]
    for _ in range(config.epochs):
        probs = _softmax(features @ weights.T + bias)
        grad_logits = (probs - targets) / len(examples)
        grad_w = grad_logits.T @ features + config.l2 * weights
        grad_b = grad_logits.sum(axis=0)
        while True:
            new_w = weights - lr * grad_w
            new_b = bias - lr * grad_b
            new_loss = loss_of(new_w, new_b)
            if new_loss <= history[-1] or lr <= config.min_learning_rate:
                break
            lr *= 0.5
        weights, bias = new_w, new_b
        history.append(new_loss)
    if not np.isfinite(history[-1]):
        raise TrainingError("training diverged to a non-finite loss")
    return BagOfFeaturesClassifier(
        task=task, vocabulary=vocab, weights=weights, bias=bias, loss_history=history
    )


class RemoteOutcomeClassifier:
    """Client for an external inference provider speaking the pair protocol."""

    def __init__(self, task: OutcomeTask, endpoint: str, timeout: float = 30.0):
        self.task = task
        self.endpoint = endpoint
        self.timeout = timeout

    def predict(self, hate_text: str, reply_text: str) -> OutcomePrediction:
        if not hate_text or not hate_text.strip():
            raise PredictionError("hate_text must be non-empty")
        if not reply_text or not reply_text.strip():
            raise PredictionError("reply_text must be non-empty")
        resp = requests.post(
            self.endpoint,
            json={"hate_text": hate_text, "reply_text": reply_text, "task": self.task.name},
            timeout=self.timeout,
        )
        resp.raise_for_status()
        body = resp.json()
        return OutcomePrediction(
            task=self.task.name,
            label=body["label"],
            confidence={label: float(p) for label, p in body["confidence"].items()},
        )


def _report_from_confusion(
    task: OutcomeTask, confusion: dict[tuple[str, str], int], support: dict[str, int]
) -> ClassifierReport:
    per_class: dict[str, PRF] = {}
    for label in task.labels:
        tp = confusion.get((label, label), 0)
        fp = sum(confusion.get((other, label), 0) for other in task.labels if other != label)
        fn = sum(confusion.get((label, other), 0) for other in task.labels if other != label)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[label] = PRF(precision, recall, f1)
    total = sum(support.values())
    weighted = PRF(
        sum(support[l] * per_class[l].precision for l in task.labels) / total,
        sum(support[l] * per_class[l].recall for l in task.labels) / total,
        sum(support[l] * per_class[l].f1 for l in task.labels) / total,
    )
    macro = PRF(
        sum(per_class[l].precision for l in task.labels) / len(task.labels),
        sum(per_class[l].recall for l in task.labels) / len(task.labels),
        sum(per_class[l].f1 for l in task.labels) / len(task.labels),
    )
    return ClassifierReport(per_class=per_class, weighted=weighted, macro=macro, support=support)


def evaluate_classifier(
    handle: OutcomeClassifier, test: Sequence[OutcomeExample], task: OutcomeTask
) -> ClassifierReport:
    """Per-class and averaged P/R/F1 from the confusion matrix."""
    if not test:
        raise ValueError("evaluation requires a non-empty test set")
    confusion: dict[tuple[str, str], int] = {}
    support = {label: 0 for label in task.labels}
    for ex in test:
        true = example_label(ex, task)
        predicted = handle.predict(ex.hate_text, ex.reply_text).label
        confusion[(true, predicted)] = confusion.get((true, predicted), 0) + 1
        support[true] += 1
    return _report_from_confusion(task, confusion, support)


def majority_baseline(
    train_labels: Sequence[str], test: Sequence[OutcomeExample], task: OutcomeTask
) -> ClassifierReport:
    """Report for the predictor that always emits the most frequent train label."""
    if not train_labels:
        raise ValueError("majority baseline requires non-empty training labels")
    counts = {label: 0 for label in task.labels}
    for label in train_labels:
        if label not in counts:
            raise ValueError(f"unknown label {label!r} for task {task.name}")
        counts[label] += 1
    majority = max(task.labels, key=lambda l: counts[l])
    confusion: dict[tuple[str, str], int] = {}
    support = {label: 0 for label in task.labels}
    for ex in test:
        true = example_label(ex, task)
        confusion[(true, majority)] = confusion.get((true, majority), 0) + 1
        support[true] += 1
    return _report_from_confusion(task, confusion, support)
