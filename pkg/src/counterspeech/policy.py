"""Trainable generation policies.

The provider interface covers sampling, exact per-token log-probabilities,
supervised updates, and clipped-surrogate policy-gradient updates. The
shipped implementation is a deliberately small autoregressive model over a
fixed word vocabulary (next-token logits conditioned on the previous
token), which makes reinforcement-learning math exactly checkable at desk
scale. Full-size model training belongs to an external trainer implementing
the same interface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .exceptions import TrainingError
from .metrics import tokenize

BOS = "<bos>"
EOS = "<eos>"
UNK = "<unk>"


@dataclass
class FinetuneConfig:
    epochs: int = 30
    learning_rate: float = 1.0
    min_learning_rate: float = 1e-8


@dataclass
class PpoUpdateConfig:
    learning_rate: float = 0.5
    clip_range: float = 0.2
    epochs: int = 1


@dataclass(frozen=True)
class PpoSample:
    """One rollout prepared for a policy-gradient update."""

    prompt: str
    response: str
    old_logprobs: tuple[float, ...]
    advantage: float


class TrainablePolicy(Protocol):
    def sample(
        self,
        prompt: str,
        max_new_tokens: int = 16,
        top_k: int | None = None,
        temperature: float = 1.0,
        seed: int | None = None,
    ) -> str: ...

    def greedy(self, prompt: str, max_new_tokens: int = 16) -> str: ...

    def logprobs(self, prompt: str, response: str) -> list[float]: ...

    def supervised_update(
        self, pairs: Sequence[tuple[str, str]], config: FinetuneConfig
    ) -> list[float]: ...

    def ppo_update(self, batch: Sequence[PpoSample], config: PpoUpdateConfig) -> dict: ...

    def snapshot(self) -> dict: ...

    def restore(self, snapshot: dict) -> None: ...

    def clone(self) -> "TrainablePolicy": ...


class TinyPolicy:
    """Previous-token conditioned softmax language model over a word vocab."""

    def __init__(self, vocabulary: Sequence[str], weights: np.ndarray | None = None):
        words = list(dict.fromkeys(vocabulary))
        for word in words:
            if tokenize(word) != [word]:
                raise ValueError(f"vocabulary word {word!r} does not survive tokenization")
        self.words = [BOS, EOS, UNK] + words
        self._index = {w: i for i, w in enumerate(self.words)}
        size = len(self.words)
        if weights is None:
            weights = np.zeros((size, size))
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.shape != (size, size):
            raise ValueError("weights shape must be (vocab, vocab)")
        self.last_loss_history: tuple[float, ...] = ()

    # -- encoding ----------------------------------------------------------

    def encode(self, text: str) -> list[int]:
        return [self._index.get(tok, self._index[UNK]) for tok in tokenize(text)]

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.words[i] for i in ids)

    def _context_ids(self, prompt: str) -> list[int]:
        return [self._index[BOS]] + self.encode(prompt)

    def _next_distribution(self, prev: int, temperature: float, top_k: int | None) -> np.ndarray:
        logits = self.weights[prev] / temperature
        # BOS and UNK are never generated.
        logits = logits.copy()
        logits[self._index[BOS]] = -np.inf
        logits[self._index[UNK]] = -np.inf
        if top_k is not None:
            order = np.argsort(-logits, kind="stable")
            logits[order[top_k:]] = -np.inf
        shifted = logits - logits.max()
        probs = np.exp(shifted)
        probs[~np.isfinite(shifted)] = 0.0
        return probs / probs.sum()

    # -- generation --------------------------------------------------------

    def sample(
        self,
        prompt: str,
        max_new_tokens: int = 16,
        top_k: int | None = None,
        temperature: float = 1.0,
        seed: int | None = None,
    ) -> str:
        rng = np.random.default_rng(seed)
        prev = self._context_ids(prompt)[-1]
        out: list[int] = []
        for _ in range(max_new_tokens):
            probs = self._next_distribution(prev, temperature, top_k)
            token = int(rng.choice(len(self.words), p=probs))
            if token == self._index[EOS]:
                break
            out.append(token)
            prev = token
        return self.decode(out)

    def greedy(self, prompt: str, max_new_tokens: int = 16) -> str:
        prev = self._context_ids(prompt)[-1]
        out: list[int] = []
        for _ in range(max_new_tokens):
            probs = self._next_distribution(prev, temperature=1.0, top_k=None)
            token = int(np.argmax(probs))
            if token == self._index[EOS]:
                break
            out.append(token)
            prev = token
        return self.decode(out)

    # -- exact log-probabilities --------------------------------------------

    def _log_softmax_row(self, prev: int) -> np.ndarray:
        logits = self.weights[prev]
        shifted = logits - logits.max()
        return shifted - np.log(np.exp(shifted).sum())

    def logprobs(self, prompt: str, response: str) -> list[float]:
        """Per-token log-probabilities of the response tokens given the prompt."""
        response_ids = self.encode(response)
        prev = self._context_ids(prompt)[-1]
        values = []
        for token in response_ids:
            values.append(float(self._log_softmax_row(prev)[token]))
            prev = token
        return values

    # -- supervised training -------------------------------------------------

    def _training_positions(
        self, pairs: Sequence[tuple[str, str]]
    ) -> list[tuple[int, int]]:
        """(previous token, next token) pairs; loss covers completion + EOS."""
        positions = []
        for prompt, completion in pairs:
            context = self._context_ids(prompt)
            targets = self.encode(completion) + [self._index[EOS]]
            prev = context[-1]
            for token in targets:
                positions.append((prev, token))
                prev = token
        return positions

    def _nll(self, weights: np.ndarray, positions: Sequence[tuple[int, int]]) -> float:
        total = 0.0
        log_rows: dict[int, np.ndarray] = {}
        for prev, token in positions:
            if prev not in log_rows:
                logits = weights[prev]
                shifted = logits - logits.max()
                log_rows[prev] = shifted - np.log(np.exp(shifted).sum())
            total -= float(log_rows[prev][token])
        return total / len(positions)

    def supervised_update(
        self, pairs: Sequence[tuple[str, str]], config: FinetuneConfig
    ) -> list[float]:
        """Next-token cross-entropy descent; backtracking keeps loss monotone."""
        if not pairs:
            raise TrainingError("finetune dataset is empty")
        positions = self._training_positions(pairs)
        history = [self._nll(self.weights, positions)]
        lr = config.learning_rate
        for _ in range(config.epochs):
            grad = np.zeros_like(self.weights)
            for prev, token in positions:
                probs = _softmax_row(self.weights[prev])
                probs[token] -= 1.0
                grad[prev] += probs
            grad /= len(positions)
            while True:
                candidate = self.weights - lr * grad
                loss = self._nll(candidate, positions)
                if loss <= history[-1] or lr <= config.min_learning_rate:
                    break
                lr *= 0.5
            self.weights = candidate
            history.append(loss)
            if not np.isfinite(loss):
                raise TrainingError("supervised training diverged to a non-finite loss")
        self.last_loss_history = tuple(history)
        return history

    # -- policy-gradient update ----------------------------------------------

    def ppo_update(self, batch: Sequence[PpoSample], config: PpoUpdateConfig) -> dict:
        """One clipped-surrogate update.

        Token gradient weight is advantage*ratio where the clipped branch is
        inactive, zero where it is active, so an all-zero-advantage batch is
        an exact parameter no-op.
        """
        if not batch:
            raise TrainingError("ppo update requires a non-empty batch")
        if any(not np.isfinite(sample.advantage) for sample in batch):
            raise TrainingError("ppo step rejected: non-finite advantage")
        if all(sample.advantage == 0.0 for sample in batch):
            return {"tokens": 0, "clip_fraction": 0.0, "mean_ratio": 1.0, "updated": False}

        low, high = 1.0 - config.clip_range, 1.0 + config.clip_range
        clipped = 0
        total_tokens = 0
        ratio_sum = 0.0
        for _ in range(config.epochs):
            grad = np.zeros_like(self.weights)
            clipped = 0
            total_tokens = 0
            ratio_sum = 0.0
            for sample in batch:
                response_ids = self.encode(sample.response)
                if len(response_ids) != len(sample.old_logprobs):
                    raise TrainingError("rollout logprobs misaligned with response tokens")
                prev = self._context_ids(sample.prompt)[-1]
                for token, old_lp in zip(response_ids, sample.old_logprobs):
                    new_lp = float(self._log_softmax_row(prev)[token])
                    ratio = float(np.exp(new_lp - old_lp))
                    total_tokens += 1
                    ratio_sum += ratio
                    clip_active = (sample.advantage > 0 and ratio > high) or (
                        sample.advantage < 0 and ratio < low
                    )
                    if clip_active:
                        clipped += 1
                    else:
                        probs = _softmax_row(self.weights[prev])
                        coeff = sample.advantage * ratio
                        grad[prev] += coeff * (-probs)
                        grad[prev, token] += coeff
                    prev = token
            if total_tokens == 0:
                return {"tokens": 0, "clip_fraction": 0.0, "mean_ratio": 1.0, "updated": False}
            grad /= total_tokens
            if not np.all(np.isfinite(grad)):
                raise TrainingError("ppo step rejected: non-finite gradient")
            self.weights = self.weights + config.learning_rate * grad
        return {
            "tokens": total_tokens,
            "clip_fraction": clipped / total_tokens,
            "mean_ratio": ratio_sum / total_tokens,
            "updated": True,
        }

    # -- state ----------------------------------------------------------------

    def snapshot(self) -> dict:
        return {"words": list(self.words), "weights": self.weights.copy()}

    def restore(self, snapshot: dict) -> None:
        if snapshot["words"] != self.words:
            raise ValueError("snapshot vocabulary does not match this policy")
        self.weights = np.asarray(snapshot["weights"], dtype=np.float64).copy()

    def clone(self) -> "TinyPolicy":
        policy = TinyPolicy.__new__(TinyPolicy)
        policy.words = list(self.words)
        policy._index = dict(self._index)
        policy.weights = self.weights.copy()
        policy.last_loss_history = ()
        return policy

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        artifact = {
            "format_version": 1,
            "vocabulary": self.words[3:],
            "weights": self.weights.tolist(),
        }
        path.write_text(json.dumps(artifact), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TinyPolicy":
        artifact = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(artifact["vocabulary"], weights=np.asarray(artifact["weights"]))


def _softmax_row(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()
