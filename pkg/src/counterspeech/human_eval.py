"""Blinded human-evaluation service.

Samples generations per method into annotation tasks, serves them over an
HTTP+JSON API with the generating method hidden, records two annotators'
yes/no labels on three dimensions, computes raw agreement (chance-corrected
kappa is logged alongside but is not normative), supports adjudication of
disagreements, and summarizes per-method yes proportions once every task is
finalized. Label storage is append-only; the API cannot delete.
"""

from __future__ import annotations

import json
import random
import threading
import time
from dataclasses import asdict, dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .exceptions import ConfigurationError
from .gateway import GenerationRecord

DIMENSIONS = ("suitableness", "relevance", "effectiveness")
YES_NO = ("yes", "no")


class AuthorizationError(PermissionError):
    """Unknown annotator."""


class NotFoundError(KeyError):
    """Unknown task."""


class ConflictError(RuntimeError):
    """Duplicate label submission."""


class ValidationError(ValueError):
    """Malformed label or adjudication."""


@dataclass(frozen=True)
class AnnotationTask:
    task_id: str
    hate_text: str
    reply_text: str
    hidden_method: str
    display_order: int

    def annotator_payload(self) -> dict:
        """The blinded view: never includes the generating method."""
        return {
            "task_id": self.task_id,
            "hate_text": self.hate_text,
            "reply_text": self.reply_text,
        }


@dataclass(frozen=True)
class LabelRecord:
    task_id: str
    annotator_id: str
    suitableness: str
    relevance: str
    effectiveness: str
    timestamp: str

    def __post_init__(self):
        for dimension in DIMENSIONS:
            value = getattr(self, dimension)
            if value not in YES_NO:
                raise ValidationError(f"{dimension} must be yes/no, got {value!r}")

    def answer(self, dimension: str) -> str:
        return getattr(self, dimension)


@dataclass(frozen=True)
class Adjudication:
    task_id: str
    dimension: str
    final_label: str
    rationale: str
    timestamp: str


@dataclass(frozen=True)
class AgreementReport:
    per_dimension: dict[str, float]
    disagreements: dict[str, list[str]]
    kappa: dict[str, float | None]
    labeled_by_both: int


def sample_for_annotation(
    runs: Mapping[str, Sequence[GenerationRecord]],
    hate_texts: Mapping[str, str],
    k: int = 50,
    seed: int = 0,
) -> list[AnnotationTask]:
    """Draw k valid generations per method and shuffle them all together."""
    picked: list[tuple[str, GenerationRecord]] = []
    for method in sorted(runs):
        valid = [rec for rec in runs[method] if rec.valid]
        if len(valid) < k:
            raise ConfigurationError(
                f"method {method} has only {len(valid)} valid generations, need {k}"
            )
        rng = random.Random(f"{seed}:{method}")
        picked.extend((method, rec) for rec in rng.sample(valid, k))
    rng = random.Random(seed)
    rng.shuffle(picked)
    tasks = []
    for order, (method, rec) in enumerate(picked):
        tasks.append(
            AnnotationTask(
                task_id=f"task-{order:04d}",
                hate_text=hate_texts[rec.hate_id],
                reply_text=rec.text,
                hidden_method=method,
                display_order=order,
            )
        )
    return tasks


def agreement_rate(
    labels_a: Mapping[str, LabelRecord], labels_b: Mapping[str, LabelRecord]
) -> AgreementReport:
    """Raw per-dimension agreement over tasks labeled by both annotators."""
    common = sorted(set(labels_a) & set(labels_b))
    if not common:
        raise ValidationError("annotators share no labeled tasks")
    per_dimension: dict[str, float] = {}
    disagreements: dict[str, list[str]] = {}
    kappa: dict[str, float | None] = {}
    for dimension in DIMENSIONS:
        matches = []
        disagreements[dimension] = []
        for task_id in common:
            a = labels_a[task_id].answer(dimension)
            b = labels_b[task_id].answer(dimension)
            matches.append(a == b)
            if a != b:
                disagreements[dimension].append(task_id)
        observed = sum(matches) / len(common)
        per_dimension[dimension] = observed
        yes_a = sum(1 for t in common if labels_a[t].answer(dimension) == "yes") / len(common)
        yes_b = sum(1 for t in common if labels_b[t].answer(dimension) == "yes") / len(common)
        expected = yes_a * yes_b + (1 - yes_a) * (1 - yes_b)
        kappa[dimension] = None if expected == 1.0 else (observed - expected) / (1 - expected)
    return AgreementReport(
        per_dimension=per_dimension,
        disagreements=disagreements,
        kappa=kappa,
        labeled_by_both=len(common),
    )


class EvalStore:
    """Single-writer embedded store with JSONL append logs.

    State is rebuilt from the logs on startup; the adjudication log is the
    audit trail (every adjudication is retained, the latest one wins).
    """

    def __init__(
        self,
        store_dir: str | Path,
        annotators: Sequence[str],
        clock: Callable[[], str] | None = None,
    ):
        if len(annotators) < 2:
            raise ConfigurationError("the protocol requires two annotators")
        self.store_dir = Path(store_dir)
        self.store_dir.mkdir(parents=True, exist_ok=True)
        self.annotators = list(annotators)
        self.clock = clock or (lambda: f"{time.time():.6f}")
        self._write_lock = threading.Lock()
        self.tasks: dict[str, AnnotationTask] = {}
        self.labels: dict[tuple[str, str], LabelRecord] = {}
        self.adjudication_log: list[Adjudication] = []
        self._replay()

    # -- paths and persistence ------------------------------------------------

    @property
    def tasks_path(self) -> Path:
        return self.store_dir / "tasks.jsonl"

    @property
    def labels_path(self) -> Path:
        return self.store_dir / "labels.jsonl"

    @property
    def adjudications_path(self) -> Path:
        return self.store_dir / "adjudications.jsonl"

    def _replay(self) -> None:
        if self.tasks_path.exists():
            for line in self.tasks_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    task = AnnotationTask(**json.loads(line))
                    self.tasks[task.task_id] = task
        if self.labels_path.exists():
            for line in self.labels_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    record = LabelRecord(**json.loads(line))
                    self.labels[(record.task_id, record.annotator_id)] = record
        if self.adjudications_path.exists():
            for line in self.adjudications_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self.adjudication_log.append(Adjudication(**json.loads(line)))

    def _append(self, path: Path, row: dict) -> None:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")

    def add_tasks(self, tasks: Sequence[AnnotationTask]) -> None:
        with self._write_lock:
            for task in tasks:
                if task.task_id in self.tasks:
                    raise ConflictError(f"task {task.task_id} already exists")
                self.tasks[task.task_id] = task
                self._append(self.tasks_path, asdict(task))

    # -- protocol operations ----------------------------------------------------

    def _check_annotator(self, annotator_id: str) -> None:
        if annotator_id not in self.annotators:
            raise AuthorizationError(f"unknown annotator {annotator_id!r}")

    def progress(self, annotator_id: str) -> dict:
        completed = sum(1 for (_, ann) in self.labels if ann == annotator_id)
        return {"completed": completed, "total": len(self.tasks)}

    def next_task(self, annotator_id: str) -> dict:
        """Blinded payload for the lowest-order task this annotator hasn't labeled.

        The payload carries exactly task_id, hate_text, reply_text; progress
        counts travel on submit acknowledgments and the done signal instead.
        """
        self._check_annotator(annotator_id)
        pending = [
            task
            for task in self.tasks.values()
            if (task.task_id, annotator_id) not in self.labels
        ]
        if not pending:
            return {"done": True, "progress": self.progress(annotator_id)}
        return min(pending, key=lambda t: t.display_order).annotator_payload()

    def submit_label(
        self,
        task_id: str,
        annotator_id: str,
        suitableness: str,
        relevance: str,
        effectiveness: str,
    ) -> LabelRecord:
        self._check_annotator(annotator_id)
        if task_id not in self.tasks:
            raise NotFoundError(f"unknown task {task_id!r}")
        record = LabelRecord(
            task_id=task_id,
            annotator_id=annotator_id,
            suitableness=suitableness,
            relevance=relevance,
            effectiveness=effectiveness,
            timestamp=self.clock(),
        )
        with self._write_lock:
            if (task_id, annotator_id) in self.labels:
                raise ConflictError(f"{annotator_id} already labeled {task_id}")
            self.labels[(task_id, annotator_id)] = record
            self._append(self.labels_path, asdict(record))
        return record

    def _pair_labels(self) -> tuple[dict[str, LabelRecord], dict[str, LabelRecord]]:
        a, b = self.annotators[0], self.annotators[1]
        labels_a = {t: rec for (t, ann), rec in self.labels.items() if ann == a}
        labels_b = {t: rec for (t, ann), rec in self.labels.items() if ann == b}
        return labels_a, labels_b

    def agreement(self) -> AgreementReport:
        labels_a, labels_b = self._pair_labels()
        return agreement_rate(labels_a, labels_b)

    def effective_adjudications(self) -> dict[tuple[str, str], Adjudication]:
        effective: dict[tuple[str, str], Adjudication] = {}
        for adjudication in self.adjudication_log:
            effective[(adjudication.task_id, adjudication.dimension)] = adjudication
        return effective

    def open_disagreements(self) -> list[dict]:
        """Disagreements not yet adjudicated; payload stays method-blind."""
        report = self.agreement()
        adjudicated = self.effective_adjudications()
        rows = []
        labels_a, labels_b = self._pair_labels()
        for dimension in DIMENSIONS:
            for task_id in report.disagreements[dimension]:
                if (task_id, dimension) in adjudicated:
                    continue
                task = self.tasks[task_id]
                rows.append(
                    {
                        "task_id": task_id,
                        "dimension": dimension,
                        "hate_text": task.hate_text,
                        "reply_text": task.reply_text,
                        "answers": {
                            self.annotators[0]: labels_a[task_id].answer(dimension),
                            self.annotators[1]: labels_b[task_id].answer(dimension),
                        },
                    }
                )
        return rows

    def adjudicate(
        self, task_id: str, dimension: str, final_label: str, rationale: str
    ) -> Adjudication:
        if dimension not in DIMENSIONS:
            raise ValidationError(f"unknown dimension {dimension!r}")
        if final_label not in YES_NO:
            raise ValidationError("final_label must be yes/no")
        if not rationale or not rationale.strip():
            raise ValidationError("adjudication requires a rationale")
        if task_id not in self.tasks:
            raise NotFoundError(f"unknown task {task_id!r}")
        labels_a, labels_b = self._pair_labels()
        if task_id not in labels_a or task_id not in labels_b:
            raise ValidationError(f"task {task_id} is not yet labeled by both annotators")
        if labels_a[task_id].answer(dimension) == labels_b[task_id].answer(dimension):
            raise ValidationError(f"no disagreement on {dimension} for {task_id}")
        adjudication = Adjudication(
            task_id=task_id,
            dimension=dimension,
            final_label=final_label,
            rationale=rationale,
            timestamp=self.clock(),
        )
        with self._write_lock:
            self.adjudication_log.append(adjudication)
            self._append(self.adjudications_path, asdict(adjudication))
        return adjudication

    def final_label(self, task_id: str, dimension: str) -> str | None:
        """Adjudicated label if present, else the agreed label, else None."""
        adjudicated = self.effective_adjudications().get((task_id, dimension))
        if adjudicated is not None:
            return adjudicated.final_label
        labels_a, labels_b = self._pair_labels()
        if task_id in labels_a and task_id in labels_b:
            a = labels_a[task_id].answer(dimension)
            if a == labels_b[task_id].answer(dimension):
                return a
        return None

    def summarize(self) -> dict:
        """Per-method, per-dimension yes proportions; unblinds the methods."""
        unfinalized = []
        finals: dict[str, dict[str, str]] = {}
        for task_id in sorted(self.tasks):
            finals[task_id] = {}
            for dimension in DIMENSIONS:
                label = self.final_label(task_id, dimension)
                if label is None:
                    unfinalized.append(f"{task_id}:{dimension}")
                else:
                    finals[task_id][dimension] = label
        if unfinalized:
            raise ValidationError(
                "tasks not finalized: " + ", ".join(unfinalized[:20])
                + ("..." if len(unfinalized) > 20 else "")
            )
        methods: dict[str, dict[str, list[str]]] = {}
        for task_id, task in self.tasks.items():
            bucket = methods.setdefault(task.hidden_method, {d: [] for d in DIMENSIONS})
            for dimension in DIMENSIONS:
                bucket[dimension].append(finals[task_id][dimension])
        summary = {}
        for method in sorted(methods):
            summary[method] = {
                dimension: sum(1 for v in methods[method][dimension] if v == "yes")
                / len(methods[method][dimension])
                for dimension in DIMENSIONS
            }
        return summary

    def export(self, out_dir: str | Path) -> dict[str, Path]:
        """Write labels.jsonl, adjudications.jsonl, and summary.csv."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        labels_out = out_dir / "labels.jsonl"
        with open(labels_out, "w", encoding="utf-8") as fh:
            for key in sorted(self.labels):
                fh.write(json.dumps(asdict(self.labels[key]), ensure_ascii=False) + "\n")
        adjudications_out = out_dir / "adjudications.jsonl"
        with open(adjudications_out, "w", encoding="utf-8") as fh:
            for adjudication in self.adjudication_log:
                fh.write(json.dumps(asdict(adjudication), ensure_ascii=False) + "\n")
        summary_out = out_dir / "summary.csv"
        summary = self.summarize()
        with open(summary_out, "w", encoding="utf-8", newline="") as fh:
            fh.write("method," + ",".join(DIMENSIONS) + "\n")
            for method, values in summary.items():
                fh.write(
                    method + "," + ",".join(f"{values[d]:.10g}" for d in DIMENSIONS) + "\n"
                )
        return {
            "labels": labels_out,
            "adjudications": adjudications_out,
            "summary": summary_out,
        }


def write_tasks(tasks: Sequence[AnnotationTask], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for task in tasks:
            fh.write(json.dumps(asdict(task), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# HTTP API
# ---------------------------------------------------------------------------

_STATUS_BY_ERROR = (
    (ValidationError, 400),
    (AuthorizationError, 403),
    (NotFoundError, 404),
    (ConflictError, 409),
)


def build_server(
    store: EvalStore, host: str = "127.0.0.1", port: int = 0, ui_dir: str | Path | None = None
) -> ThreadingHTTPServer:
    """HTTP server exposing the annotation API and, optionally, the UI assets."""
    ui_root = Path(ui_dir).resolve() if ui_dir else None

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _send_json(self, status: int, payload) -> None:
            body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_error_for(self, exc: Exception) -> None:
            for exc_type, status in _STATUS_BY_ERROR:
                if isinstance(exc, exc_type):
                    # KeyError reprs its message; unwrap for a clean payload
                    message = exc.args[0] if exc.args else str(exc)
                    self._send_json(status, {"error": str(message)})
                    return
            self._send_json(500, {"error": str(exc)})

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length", 0))
            if length == 0:
                return {}
            return json.loads(self.rfile.read(length))

        def do_GET(self):
            try:
                parts = [p for p in self.path.split("?")[0].split("/") if p]
                if parts[:2] == ["api", "annotators"] and len(parts) == 4 and parts[3] == "next":
                    self._send_json(200, store.next_task(parts[2]))
                elif parts == ["api", "agreement"]:
                    report = store.agreement()
                    self._send_json(
                        200,
                        {
                            "per_dimension": report.per_dimension,
                            "disagreements": report.disagreements,
                            "kappa": report.kappa,
                            "labeled_by_both": report.labeled_by_both,
                        },
                    )
                elif parts == ["api", "disagreements"]:
                    self._send_json(200, store.open_disagreements())
                elif parts == ["api", "summary"]:
                    self._send_json(200, store.summarize())
                elif ui_root is not None:
                    self._serve_static(parts)
                else:
                    self._send_json(404, {"error": "not found"})
            except Exception as exc:  # noqa: BLE001 - mapped to HTTP statuses
                self._send_error_for(exc)

        def _serve_static(self, parts: list[str]) -> None:
            target = "index.html" if not parts else "/".join(parts)
            candidate = (ui_root / target).resolve()
            if not str(candidate).startswith(str(ui_root)) or not candidate.is_file():
                self._send_json(404, {"error": "not found"})
                return
            content_types = {
                ".html": "text/html; charset=utf-8",
                ".js": "text/javascript; charset=utf-8",
                ".css": "text/css; charset=utf-8",
            }
            body = candidate.read_bytes()
            self.send_response(200)
            self.send_header(
                "Content-Type", content_types.get(candidate.suffix, "application/octet-stream")
            )
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_POST(self):
            try:
                parts = [p for p in self.path.split("?")[0].split("/") if p]
                body = self._read_body()
                if parts[:2] == ["api", "tasks"] and len(parts) == 4 and parts[3] == "labels":
                    missing = [d for d in ("annotator_id", *DIMENSIONS) if d not in body]
                    if missing:
                        raise ValidationError(f"missing fields: {', '.join(missing)}")
                    record = store.submit_label(
                        task_id=parts[2],
                        annotator_id=body["annotator_id"],
                        suitableness=body["suitableness"],
                        relevance=body["relevance"],
                        effectiveness=body["effectiveness"],
                    )
                    self._send_json(
                        201,
                        {
                            "stored": True,
                            "task_id": record.task_id,
                            "progress": store.progress(record.annotator_id),
                        },
                    )
                elif parts == ["api", "adjudications"]:
                    missing = [
                        f
                        for f in ("task_id", "dimension", "final_label", "rationale")
                        if f not in body
                    ]
                    if missing:
                        raise ValidationError(f"missing fields: {', '.join(missing)}")
                    store.adjudicate(
                        body["task_id"], body["dimension"], body["final_label"], body["rationale"]
                    )
                    self._send_json(201, {"stored": True})
                else:
                    self._send_json(404, {"error": "not found"})
            except Exception as exc:  # noqa: BLE001 - mapped to HTTP statuses
                self._send_error_for(exc)

    return ThreadingHTTPServer((host, port), Handler)
