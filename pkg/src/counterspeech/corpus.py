"""Corpus ingestion, outcome labeling, and deterministic splits.

Heterogeneous hate-speech/counterspeech sources are normalized into one
line-delimited JSON record format (see ``write_corpus``/``load_corpus``).
Conversation threads carry the follow-up structure needed to derive the two
outcome labels: conversation incivility and hater reentry.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .exceptions import ConfigurationError, CorpusFormatError, LabelingError

SOURCES = ("benchmark_reddit", "benchmark_gab", "conan", "multiconan", "reddit_live", "synthetic")
SPLITS = ("train", "test", "unassigned")

INCIVILITY_LABELS = ("high", "medium", "low")
REENTRY_LABELS = ("hate_reentry", "no_reentry", "nonhate_reentry")

DEFAULT_POPULARITY_CUTOFFS = (2, 5)
DEFAULT_HATE_FRACTION_CUTOFF = 0.25


@dataclass(frozen=True)
class CorpusRecord:
    """One hate-comment/reply pair in the normalized schema."""

    id: str
    hate_text: str
    reply_text: str | None
    source: str
    split: str = "unassigned"

    def __post_init__(self):
        if not self.id:
            raise CorpusFormatError("record id must be non-empty")
        if not self.hate_text or not self.hate_text.strip():
            raise CorpusFormatError("hate_text must be non-empty")
        if self.source not in SOURCES:
            raise CorpusFormatError(f"unknown source {self.source!r}")
        if self.split not in SPLITS:
            raise CorpusFormatError(f"unknown split {self.split!r}")


@dataclass(frozen=True)
class OutcomeExample:
    """Hate/reply pair carrying at least one conversation-outcome label."""

    id: str
    hate_text: str
    reply_text: str
    incivility_label: str | None = None
    reentry_label: str | None = None

    def __post_init__(self):
        if not self.hate_text or not self.hate_text.strip():
            raise CorpusFormatError("hate_text must be non-empty")
        if not self.reply_text or not self.reply_text.strip():
            raise CorpusFormatError("reply_text must be non-empty")
        if self.incivility_label is None and self.reentry_label is None:
            raise CorpusFormatError("at least one outcome label must be present")
        if self.incivility_label is not None and self.incivility_label not in INCIVILITY_LABELS:
            raise CorpusFormatError(f"unknown incivility label {self.incivility_label!r}")
        if self.reentry_label is not None and self.reentry_label not in REENTRY_LABELS:
            raise CorpusFormatError(f"unknown reentry label {self.reentry_label!r}")


@dataclass(frozen=True)
class FollowUp:
    author_id: str
    text: str
    is_hateful: bool


@dataclass(frozen=True)
class ConversationThread:
    """A hate comment, the reply under evaluation, and time-ordered follow-ups.

    Hateful-followup flags are ingested, not computed here; the hate detector
    used during crawling is out of scope.
    """

    hate_comment: CorpusRecord
    reply_text: str
    hater_id: str | None = None
    followups: tuple[FollowUp, ...] = ()


@dataclass(frozen=True)
class RawConversation:
    """A crawled conversation with hate comments marked by index.

    ``responses`` maps a hate-comment index to the replies written for that
    specific comment; replies never attach to other hate comments in the
    same conversation.
    """

    id: str
    comments: tuple[str, ...]
    hate_indices: tuple[int, ...]
    responses: dict[int, tuple[str, ...]] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def _iter_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON ({exc.msg})", line=lineno) from exc
            if not isinstance(obj, dict):
                raise CorpusFormatError("record must be a JSON object", line=lineno)
            yield lineno, obj


def load_corpus(path: str | Path, format: str) -> list[CorpusRecord]:
    """Load one source file into normalized records, in file order.

    ``reddit_live`` and ``synthetic`` files already use the normalized schema.
    ``benchmark_reddit``/``benchmark_gab`` files hold one conversation object
    per line ({id, text, hate_speech_idx, response}) and are expanded through
    :func:`extract_pairs`. ``conan``/``multiconan`` files hold one
    {hate_speech, counter_speech} object per line.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format not in SOURCES:
        raise ConfigurationError(f"unknown corpus format {format!r}; expected one of {SOURCES}")

    records: list[CorpusRecord] = []
    if format in ("reddit_live", "synthetic"):
        for lineno, obj in _iter_jsonl(path):
            records.append(_record_from_normalized(obj, format, lineno))
    elif format in ("benchmark_reddit", "benchmark_gab"):
        for lineno, obj in _iter_jsonl(path):
            conversation = _conversation_from_benchmark(obj, lineno)
            records.extend(
                replace(rec, source=format) for rec in extract_pairs(conversation)
            )
    else:  # conan / multiconan
        for lineno, obj in _iter_jsonl(path):
            records.append(_record_from_conan(obj, format, lineno))

    seen: set[str] = set()
    for rec in records:
        if rec.id in seen:
            raise CorpusFormatError(f"duplicate record id {rec.id!r}")
        seen.add(rec.id)
    return records


def _record_from_normalized(obj: dict, source: str, lineno: int) -> CorpusRecord:
    try:
        return CorpusRecord(
            id=str(obj["id"]),
            hate_text=obj["hate_text"],
            reply_text=obj.get("reply_text"),
            source=obj.get("source", source),
            split=obj.get("split", "unassigned"),
        )
    except KeyError as exc:
        raise CorpusFormatError(f"missing field {exc.args[0]!r}", line=lineno) from exc
    except CorpusFormatError as exc:
        raise CorpusFormatError(str(exc), line=lineno) from exc


def _conversation_from_benchmark(obj: dict, lineno: int) -> RawConversation:
    try:
        comments = tuple(obj["text"])
        hate_indices = tuple(int(i) for i in obj["hate_speech_idx"])
        conv_id = str(obj.get("id", lineno))
    except KeyError as exc:
        raise CorpusFormatError(f"missing field {exc.args[0]!r}", line=lineno) from exc
    for idx in hate_indices:
        if not 0 <= idx < len(comments):
            raise CorpusFormatError(f"hate index {idx} out of range", line=lineno)
    # Benchmark responses address the conversation's hate as a whole; attach
    # the full response list to every marked comment.
    responses = tuple(obj.get("response") or ())
    return RawConversation(
        id=conv_id,
        comments=comments,
        hate_indices=hate_indices,
        responses={idx: responses for idx in hate_indices},
    )


def _record_from_conan(obj: dict, source: str, lineno: int) -> CorpusRecord:
    hate = obj.get("hate_speech", obj.get("hateSpeech"))
    reply = obj.get("counter_speech", obj.get("counterSpeech"))
    if hate is None or reply is None:
        raise CorpusFormatError("expected hate_speech and counter_speech fields", line=lineno)
    try:
        return CorpusRecord(
            id=str(obj.get("id", f"{source}-{lineno}")),
            hate_text=hate,
            reply_text=reply,
            source=source,
        )
    except CorpusFormatError as exc:
        raise CorpusFormatError(str(exc), line=lineno) from exc


def extract_pairs(conversation: RawConversation) -> list[CorpusRecord]:
    """Expand a marked conversation into one record per (hate, response) pair."""
    records = []
    for hate_idx in conversation.hate_indices:
        hate_text = conversation.comments[hate_idx]
        for ordinal, response in enumerate(conversation.responses.get(hate_idx, ())):
            records.append(
                CorpusRecord(
                    id=f"{conversation.id}:{hate_idx}:{ordinal}",
                    hate_text=hate_text,
                    reply_text=response,
                    source="reddit_live",
                )
            )
    return records


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def split_corpus(
    records: Sequence[CorpusRecord], train_fraction: float, seed: int
) -> tuple[list[CorpusRecord], list[CorpusRecord]]:
    """Partition records into train/test by seeded id-hash order.

    Ordering depends only on (seed, record id), so the same ids produce the
    same partition regardless of input order or re-ingestion.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError(f"train_fraction must be in (0,1), got {train_fraction}")
    if not records:
        raise ConfigurationError("cannot split an empty corpus")

    def order_key(rec: CorpusRecord) -> str:
        return hashlib.sha256(f"{seed}:{rec.id}".encode("utf-8")).hexdigest()

    shuffled = sorted(records, key=order_key)
    n_train = round(train_fraction * len(records))
    train = [replace(rec, split="train") for rec in shuffled[:n_train]]
    test = [replace(rec, split="test") for rec in shuffled[n_train:]]
    return train, test


# ---------------------------------------------------------------------------
# Outcome labeling
# ---------------------------------------------------------------------------

def label_incivility(
    thread: ConversationThread,
    popularity_cutoffs: tuple[int, int] = DEFAULT_POPULARITY_CUTOFFS,
    hate_fraction_cutoff: float = DEFAULT_HATE_FRACTION_CUTOFF,
) -> str:
    """Derive the incivility label from follow-up count and hate concentration.

    Low requires popularity at or above the high cutoff with hate fraction at
    or below the cutoff; high requires hate fraction above the cutoff; all
    other cases (including zero follow-ups) are medium. Depends only on the
    counts, never on text content.
    """
    low_cut, high_cut = popularity_cutoffs
    if not low_cut < high_cut:
        raise ConfigurationError(f"popularity cutoffs must be ordered, got {popularity_cutoffs}")
    n = len(thread.followups)
    if n == 0:
        return "medium"
    hate_fraction = sum(1 for f in thread.followups if f.is_hateful) / n
    if hate_fraction > hate_fraction_cutoff:
        return "high"
    if n >= high_cut:
        return "low"
    return "medium"


def label_reentry(thread: ConversationThread) -> str:
    """Classify the hate author's return behavior after the reply."""
    if thread.hater_id is None:
        raise LabelingError("hater_id is missing; reentry cannot be labeled")
    own = [f for f in thread.followups if f.author_id == thread.hater_id]
    if not own:
        return "no_reentry"
    if any(f.is_hateful for f in own):
        return "hate_reentry"
    return "nonhate_reentry"


# ---------------------------------------------------------------------------
# Normalized file I/O
# ---------------------------------------------------------------------------

def write_corpus(records: Iterable[CorpusRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "id": rec.id,
                        "hate_text": rec.hate_text,
                        "reply_text": rec.reply_text,
                        "source": rec.source,
                        "split": rec.split,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def write_outcomes(examples: Iterable[OutcomeExample], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {
                        "id": ex.id,
                        "hate_text": ex.hate_text,
                        "reply_text": ex.reply_text,
                        "incivility": ex.incivility_label,
                        "reentry": ex.reentry_label,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_outcomes(path: str | Path) -> list[OutcomeExample]:
    examples = []
    for lineno, obj in _iter_jsonl(Path(path)):
        try:
            examples.append(
                OutcomeExample(
                    id=str(obj["id"]),
                    hate_text=obj["hate_text"],
                    reply_text=obj["reply_text"],
                    incivility_label=obj.get("incivility"),
                    reentry_label=obj.get("reentry"),
                )
            )
        except KeyError as exc:
            raise CorpusFormatError(f"missing field {exc.args[0]!r}", line=lineno) from exc
        except CorpusFormatError as exc:
            raise CorpusFormatError(str(exc), line=lineno) from exc
    return examples
