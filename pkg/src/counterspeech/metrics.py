"""Automatic evaluation metrics for generated counterspeech.

Relevance (BLEU, ROUGE-1/2/L, METEOR, BERTScore), reference-free quality
(grammaticality/redundancy/focus with a combined score), diversity (TTR,
distinct-n), novelty against a reference corpus, aggregation, and pairwise
metric correlation. All computations are pure functions; the contextual
embedder and the sentence-acceptability scorer are pluggable providers.

Token-level entry points (``bleu_tokens`` etc.) are public so callers can
score pre-tokenized sequences; the text-level functions tokenize first.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np
import requests

from .exceptions import ConfigurationError

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)
_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")

METEOR_ALPHA = 0.9
METEOR_GAMMA = 0.5
METEOR_THETA = 3

REDUNDANCY_SIMILARITY_THRESHOLD = 0.9
FOCUS_SIMILARITY_THRESHOLD = 0.05
GRUEN_PENALTY_STEP = 0.1


def tokenize(text: str) -> list[str]:
    """Lowercased, punctuation-separated word tokens."""
    return _TOKEN_RE.findall(text.lower())


def ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def _ngram_counts(tokens: Sequence[str], n: int) -> dict[tuple[str, ...], int]:
    counts: dict[tuple[str, ...], int] = {}
    for i in range(len(tokens) - n + 1):
        gram = tuple(tokens[i : i + n])
        counts[gram] = counts.get(gram, 0) + 1
    return counts


# ---------------------------------------------------------------------------
# Score containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class RougeScores:
    rouge_1: PRF
    rouge_2: PRF
    rouge_l: PRF


@dataclass(frozen=True)
class RelevanceScores:
    bleu: float
    rouge: RougeScores
    meteor: float
    bertscore: PRF


@dataclass(frozen=True)
class GruenScores:
    grammaticality: float
    redundancy: float
    focus: float
    overall: float


@dataclass(frozen=True)
class DiversityScores:
    ttr: float
    distinct_1: float
    distinct_2: float


@dataclass(frozen=True)
class NoveltyScores:
    new_unigrams: int
    new_bigrams: int


@dataclass(frozen=True)
class AggregateReport:
    per_sample: tuple[float, ...]
    mean: float
    std: float


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------

def bleu_tokens(
    candidate: Sequence[str], references: Sequence[Sequence[str]], max_n: int = 4
) -> float:
    """Geometric mean of clipped n-gram precisions with brevity penalty.

    Smoothing: for n >= 2, a zero match count adds 1 to both numerator and
    denominator. A zero unigram match yields 0. The brevity penalty uses the
    reference length closest to the candidate length (ties to the shorter).
    """
    if not references:
        raise ConfigurationError("bleu requires at least one reference")
    if not candidate:
        return 0.0

    log_precision_sum = 0.0
    for n in range(1, max_n + 1):
        cand_counts = _ngram_counts(candidate, n)
        total = sum(cand_counts.values())
        ref_counts = [_ngram_counts(ref, n) for ref in references]
        clipped = 0
        for gram, count in cand_counts.items():
            max_ref = max(counts.get(gram, 0) for counts in ref_counts)
            clipped += min(count, max_ref)
        if n == 1:
            if clipped == 0:
                return 0.0
            p_n = clipped / total
        elif clipped == 0:
            p_n = (clipped + 1) / (total + 1)
        else:
            p_n = clipped / total
        log_precision_sum += math.log(p_n) / max_n

    cand_len = len(candidate)
    ref_len = min(
        (len(ref) for ref in references),
        key=lambda rl: (abs(rl - cand_len), rl),
    )
    if cand_len >= ref_len:
        brevity = 1.0
    else:
        brevity = math.exp(1 - ref_len / cand_len)
    return brevity * math.exp(log_precision_sum)


def bleu(candidate: str, references: Sequence[str], max_n: int = 4) -> float:
    return bleu_tokens(tokenize(candidate), [tokenize(r) for r in references], max_n=max_n)


# ---------------------------------------------------------------------------
# ROUGE
# ---------------------------------------------------------------------------

def _rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> PRF:
    cand_counts = _ngram_counts(candidate, n)
    ref_counts = _ngram_counts(reference, n)
    overlap = sum(min(count, ref_counts.get(gram, 0)) for gram, count in cand_counts.items())
    cand_total = sum(cand_counts.values())
    ref_total = sum(ref_counts.values())
    precision = overlap / cand_total if cand_total else 0.0
    recall = overlap / ref_total if ref_total else 0.0
    return PRF(precision, recall, _f1(precision, recall))


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        curr = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                curr[j] = prev[j - 1] + 1
            else:
                curr[j] = max(prev[j], curr[j - 1])
        prev = curr
    return prev[len(b)]


def rouge_tokens(candidate: Sequence[str], reference: Sequence[str]) -> RougeScores:
    lcs = _lcs_length(candidate, reference)
    precision = lcs / len(candidate) if candidate else 0.0
    recall = lcs / len(reference) if reference else 0.0
    return RougeScores(
        rouge_1=_rouge_n(candidate, reference, 1),
        rouge_2=_rouge_n(candidate, reference, 2),
        rouge_l=PRF(precision, recall, _f1(precision, recall)),
    )


def rouge(candidate: str, reference: str) -> RougeScores:
    return rouge_tokens(tokenize(candidate), tokenize(reference))


# ---------------------------------------------------------------------------
# METEOR
# ---------------------------------------------------------------------------

_STEM_SUFFIXES = ("ings", "ing", "edly", "ed", "ies", "es", "s", "ly", "er", "est")


@lru_cache(maxsize=65536)
def stem(token: str) -> str:
    """Lightweight suffix stripper used by the METEOR stem stage."""
    for suffix in _STEM_SUFFIXES:
        if token.endswith(suffix) and len(token) - len(suffix) >= 3:
            return token[: -len(suffix)]
    return token


def _align_stage(
    candidate: Sequence[str],
    reference: Sequence[str],
    cand_free: list[bool],
    ref_free: list[bool],
    key,
) -> list[tuple[int, int]]:
    pairs = []
    for i, cand_tok in enumerate(candidate):
        if not cand_free[i]:
            continue
        want = key(cand_tok)
        for j, ref_tok in enumerate(reference):
            if ref_free[j] and key(ref_tok) == want:
                pairs.append((i, j))
                cand_free[i] = False
                ref_free[j] = False
                break
    return pairs


def meteor_tokens(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Staged exact-then-stem alignment with fragmentation penalty.

    F = P*R / (alpha*P + (1-alpha)*R), penalty = gamma*(chunks/matches)^theta,
    score = F*(1 - penalty). Zero matches score 0.
    """
    if not candidate or not reference:
        return 0.0
    cand_free = [True] * len(candidate)
    ref_free = [True] * len(reference)
    pairs = _align_stage(candidate, reference, cand_free, ref_free, key=lambda t: t)
    pairs += _align_stage(candidate, reference, cand_free, ref_free, key=stem)
    matches = len(pairs)
    if matches == 0:
        return 0.0
    precision = matches / len(candidate)
    recall = matches / len(reference)
    f_mean = (precision * recall) / (METEOR_ALPHA * precision + (1 - METEOR_ALPHA) * recall)
    pairs.sort()
    chunks = 1
    for (c_prev, r_prev), (c_next, r_next) in zip(pairs, pairs[1:]):
        if c_next != c_prev + 1 or r_next != r_prev + 1:
            chunks += 1
    penalty = METEOR_GAMMA * (chunks / matches) ** METEOR_THETA
    return f_mean * (1 - penalty)


def meteor(candidate: str, reference: str) -> float:
    return meteor_tokens(tokenize(candidate), tokenize(reference))


# ---------------------------------------------------------------------------
# BERTScore
# ---------------------------------------------------------------------------

class EmbeddingProvider(Protocol):
    """Maps a token sequence to one vector per token."""

    def embed(self, tokens: Sequence[str]) -> list[np.ndarray]: ...


class OneHotEmbedder:
    """Identity embedder: equal tokens map to equal one-hot axes.

    Under this provider BERTScore reduces to greedy unigram overlap, which
    makes it the reference provider for tests.
    """

    def __init__(self):
        self._index: dict[str, int] = {}

    def embed(self, tokens: Sequence[str]) -> list[np.ndarray]:
        for tok in tokens:
            if tok not in self._index:
                self._index[tok] = len(self._index)
        dim = len(self._index)
        vectors = []
        for tok in tokens:
            vec = np.zeros(dim)
            vec[self._index[tok]] = 1.0
            vectors.append(vec)
        return vectors


class HttpEmbedder:
    """Client for an external contextual-embedding service."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def embed(self, tokens: Sequence[str]) -> list[np.ndarray]:
        resp = requests.post(self.endpoint, json={"tokens": list(tokens)}, timeout=self.timeout)
        resp.raise_for_status()
        return [np.asarray(vec, dtype=float) for vec in resp.json()["vectors"]]


def _pad_to(vectors: list[np.ndarray], dim: int) -> np.ndarray:
    matrix = np.zeros((len(vectors), dim))
    for i, vec in enumerate(vectors):
        matrix[i, : vec.shape[0]] = vec
    return matrix


def bert_score_tokens(
    candidate: Sequence[str], reference: Sequence[str], embedder: EmbeddingProvider
) -> PRF:
    if not candidate or not reference:
        raise ValueError("bert_score requires non-empty token sequences on both sides")
    cand_vecs = embedder.embed(candidate)
    ref_vecs = embedder.embed(reference)
    # A provider whose space grows between calls may return shorter vectors
    # for the first sequence; zero-padding preserves norms and dot products.
    dim = max(v.shape[0] for v in cand_vecs + ref_vecs)
    cand = _pad_to(cand_vecs, dim)
    ref = _pad_to(ref_vecs, dim)
    for name, matrix in (("candidate", cand), ("reference", ref)):
        norms = np.linalg.norm(matrix, axis=1)
        if np.any(norms == 0):
            raise ValueError(f"{name} embedding contains a zero vector; cannot normalize")
        matrix /= norms[:, None]
    sims = cand @ ref.T
    precision = float(sims.max(axis=1).mean())
    recall = float(sims.max(axis=0).mean())
    return PRF(precision, recall, _f1(precision, recall))


def bert_score(candidate: str, reference: str, embedder: EmbeddingProvider) -> PRF:
    return bert_score_tokens(tokenize(candidate), tokenize(reference), embedder)


# ---------------------------------------------------------------------------
# GRUEN-style quality
# ---------------------------------------------------------------------------

class AcceptabilityProvider(Protocol):
    """Scores one sentence's linguistic acceptability in [0, 1]."""

    def score(self, sentence: str) -> float: ...


class HeuristicAcceptabilityScorer:
    """Default self-contained scorer: 1.0 minus a step per malformed token.

    A token is flagged when it has a character run of three or more, is
    implausibly long, or is a four-plus letter word with no vowel. This is a
    deliberately rough stand-in for an external acceptability model.
    """

    def __init__(self, penalty_step: float = 0.1, max_token_length: int = 18):
        self.penalty_step = penalty_step
        self.max_token_length = max_token_length

    def _is_malformed(self, token: str) -> bool:
        if len(token) > self.max_token_length:
            return True
        if re.search(r"(.)\1\1", token):
            return True
        if len(token) >= 4 and token.isalpha() and not re.search(r"[aeiouy]", token):
            return True
        return False

    def score(self, sentence: str) -> float:
        flagged = sum(1 for tok in tokenize(sentence) if self._is_malformed(tok))
        return max(0.0, 1.0 - self.penalty_step * flagged)


class HttpAcceptabilityScorer:
    """Client for an external sentence-acceptability model."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def score(self, sentence: str) -> float:
        resp = requests.post(self.endpoint, json={"sentence": sentence}, timeout=self.timeout)
        resp.raise_for_status()
        return float(resp.json()["score"])


def split_sentences(text: str) -> list[str]:
    """Split on terminal punctuation followed by whitespace; drops empty chunks."""
    parts = _SENTENCE_SPLIT_RE.split(text.strip())
    return [part for part in (p.strip() for p in parts) if part and tokenize(part)]


def _bow_cosine(a: Sequence[str], b: Sequence[str]) -> float:
    counts_a: dict[str, int] = {}
    counts_b: dict[str, int] = {}
    for tok in a:
        counts_a[tok] = counts_a.get(tok, 0) + 1
    for tok in b:
        counts_b[tok] = counts_b.get(tok, 0) + 1
    dot = sum(count * counts_b.get(tok, 0) for tok, count in counts_a.items())
    norm_a = math.sqrt(sum(c * c for c in counts_a.values()))
    norm_b = math.sqrt(sum(c * c for c in counts_b.values()))
    if norm_a == 0 or norm_b == 0:
        return 0.0
    return dot / (norm_a * norm_b)


def gruen(text: str, acceptability: AcceptabilityProvider) -> GruenScores:
    """Grammaticality minus redundancy and focus penalties, clamped to [0, 1].

    Redundancy: -0.1 per sentence pair with lexical cosine above 0.9.
    Focus: -0.1 per adjacent pair with cosine below 0.05. Both floor at -1.
    """
    sentences = split_sentences(text)
    if not sentences:
        raise ValueError("gruen requires text with at least one sentence")
    scores = []
    for sentence in sentences:
        value = acceptability.score(sentence)
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"acceptability score {value} outside [0,1]")
        scores.append(value)
    grammaticality = sum(scores) / len(scores)

    token_lists = [tokenize(s) for s in sentences]
    redundant_pairs = 0
    for i in range(len(token_lists)):
        for j in range(i + 1, len(token_lists)):
            if _bow_cosine(token_lists[i], token_lists[j]) > REDUNDANCY_SIMILARITY_THRESHOLD:
                redundant_pairs += 1
    unfocused_pairs = 0
    for i in range(len(token_lists) - 1):
        if _bow_cosine(token_lists[i], token_lists[i + 1]) < FOCUS_SIMILARITY_THRESHOLD:
            unfocused_pairs += 1

    redundancy = max(-1.0, -GRUEN_PENALTY_STEP * redundant_pairs)
    focus = max(-1.0, -GRUEN_PENALTY_STEP * unfocused_pairs)
    overall = min(1.0, max(0.0, grammaticality + redundancy + focus))
    return GruenScores(grammaticality, redundancy, focus, overall)


# ---------------------------------------------------------------------------
# Diversity and novelty
# ---------------------------------------------------------------------------

def ttr(texts: Sequence[str]) -> float:
    """Distinct tokens over total tokens, pooled across all texts."""
    pooled: list[str] = []
    for text in texts:
        pooled.extend(tokenize(text))
    if not pooled:
        raise ValueError("ttr requires at least one token")
    return len(set(pooled)) / len(pooled)


def distinct_n(texts: Sequence[str], n: int) -> float:
    """Distinct n-grams over total n-grams, pooled across all texts."""
    total = 0
    distinct: set[tuple[str, ...]] = set()
    for text in texts:
        grams = ngrams(tokenize(text), n)
        total += len(grams)
        distinct.update(grams)
    if total == 0:
        raise ValueError(f"no {n}-grams present; all texts shorter than {n} tokens")
    return len(distinct) / total


def diversity(texts: Sequence[str]) -> DiversityScores:
    return DiversityScores(ttr=ttr(texts), distinct_1=distinct_n(texts, 1), distinct_2=distinct_n(texts, 2))


def novelty(texts: Sequence[str], reference_corpus: Sequence[str]) -> NoveltyScores:
    """Count distinct uni/bigrams in texts that never occur in the references."""
    if not reference_corpus:
        raise ConfigurationError("novelty requires a non-empty reference corpus")
    ref_unigrams: set[tuple[str, ...]] = set()
    ref_bigrams: set[tuple[str, ...]] = set()
    for text in reference_corpus:
        tokens = tokenize(text)
        ref_unigrams.update(ngrams(tokens, 1))
        ref_bigrams.update(ngrams(tokens, 2))
    new_unigrams: set[tuple[str, ...]] = set()
    new_bigrams: set[tuple[str, ...]] = set()
    for text in texts:
        tokens = tokenize(text)
        new_unigrams.update(g for g in ngrams(tokens, 1) if g not in ref_unigrams)
        new_bigrams.update(g for g in ngrams(tokens, 2) if g not in ref_bigrams)
    return NoveltyScores(new_unigrams=len(new_unigrams), new_bigrams=len(new_bigrams))


# ---------------------------------------------------------------------------
# Aggregation and correlation
# ---------------------------------------------------------------------------

def aggregate(per_sample: Sequence[float]) -> AggregateReport:
    """Population mean and standard deviation, per-sample values retained."""
    if not per_sample:
        raise ValueError("aggregate requires at least one value")
    mean = math.fsum(per_sample) / len(per_sample)
    variance = math.fsum((x - mean) ** 2 for x in per_sample) / len(per_sample)
    return AggregateReport(per_sample=tuple(per_sample), mean=mean, std=math.sqrt(variance))


def _pearson(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    n = len(xs)
    mean_x = math.fsum(xs) / n
    mean_y = math.fsum(ys) / n
    cov = math.fsum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    var_x = math.fsum((x - mean_x) ** 2 for x in xs)
    var_y = math.fsum((y - mean_y) ** 2 for y in ys)
    if var_x == 0 or var_y == 0:
        return None
    return cov / math.sqrt(var_x * var_y)


def metric_correlation(
    columns: Mapping[str, Sequence[float]],
) -> dict[str, dict[str, float | None]]:
    """Pairwise Pearson correlations; constant columns yield missing entries."""
    names = list(columns)
    lengths = {len(columns[name]) for name in names}
    if len(lengths) > 1:
        raise ConfigurationError("all metric columns must have equal length")
    if lengths and next(iter(lengths)) < 2:
        raise ConfigurationError("metric correlation requires at least 2 samples")
    matrix: dict[str, dict[str, float | None]] = {}
    for a in names:
        matrix[a] = {}
        for b in names:
            matrix[a][b] = _pearson(columns[a], columns[b])
    return matrix


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

def format_score(value: float | int | None) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return f"{value:.10g}"


def write_metric_report_csv(
    path: str | Path,
    sample_ids: Sequence[str],
    columns: Mapping[str, Sequence[float]],
) -> None:
    """One row per sample, one column per metric, plus mean/std summary rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    for name in names:
        if len(columns[name]) != len(sample_ids):
            raise ConfigurationError(f"column {name!r} length does not match sample ids")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", *names])
        for i, sample_id in enumerate(sample_ids):
            writer.writerow([sample_id, *(format_score(columns[name][i]) for name in names)])
        summaries = {name: aggregate(columns[name]) for name in names}
        writer.writerow(["mean", *(format_score(summaries[name].mean) for name in names)])
        writer.writerow(["std", *(format_score(summaries[name].std) for name in names)])


def write_correlation_csv(
    path: str | Path, matrix: Mapping[str, Mapping[str, float | None]]
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(matrix)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", *names])
        for a in names:
            writer.writerow([a, *(format_score(matrix[a][b]) for b in names)])


def load_correlation_csv(path: str | Path) -> dict[str, dict[str, float | None]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    matrix: dict[str, dict[str, float | None]] = {}
    for row in rows[1:]:
        matrix[row[0]] = {
            name: (float(cell) if cell else None) for name, cell in zip(names, row[1:])
        }
    return matrix


def relevance_scores(
    candidate: str, references: Sequence[str], embedder: EmbeddingProvider
) -> RelevanceScores:
    """All relevance metrics for one sample.

    When several references exist, single-reference metrics are scored
    against each and the best value (by F1 for triples) is kept; BLEU uses
    its native multi-reference clipping.
    """
    if not references:
        raise ConfigurationError("relevance scoring requires at least one reference")
    best_rouge = max(
        (rouge(candidate, ref) for ref in references), key=lambda r: r.rouge_l.f1
    )
    best_meteor = max(meteor(candidate, ref) for ref in references)
    best_bert = max(
        (bert_score(candidate, ref, embedder) for ref in references), key=lambda p: p.f1
    )
    return RelevanceScores(
        bleu=bleu(candidate, references),
        rouge=best_rouge,
        meteor=best_meteor,
        bertscore=best_bert,
    )


def gruen_to_json(scores: GruenScores) -> str:
    return json.dumps(scores.__dict__, sort_keys=True)
