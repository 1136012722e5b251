"""Uniform chat-generation interface over pluggable language-model backends.

Builds the three prompt variants (baseline, low-incivility, reentry),
applies the shared sampling parameters, fans generation requests out to a
backend, and flags invalid/refusal responses. Backends are providers; the
model identity is configuration, never code.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

from .exceptions import ConfigurationError, GatewayError, TransportError

PROMPT_CONDITIONS = ("baseline", "effective", "reentry")

SYSTEM_PROMPT = "Generate a response in Reddit Style."

_USER_TEMPLATES = {
    "baseline": (
        "Here is the Reddit comment: {hate}. "
        "Please write a counterspeech to the Reddit hate comment."
    ),
    "effective": (
        "Here is the hate comment: {hate}. "
        "Please write a counterspeech to the hate comment so that it could "
        "lead to low incivility in the following conversations."
    ),
    "reentry": (
        "Here is the hate comment: {hate}. "
        "Please write a counterspeech to the hate comment so that the hater "
        "will come back and have constructive engagement in the conversation."
    ),
}

DEFAULT_REFUSAL_PATTERNS = (
    "i cannot",
    "i can't",
    "i can not",
    "i won't",
    "i will not",
    "i'm sorry",
    "i am sorry",
    "i apologize",
    "as an ai",
    "i'm not able to",
    "i am not able to",
    "i'm unable",
    "i am unable",
    "sorry, i",
)


@dataclass(frozen=True)
class GenerationParams:
    top_k: int = 8
    temperature: float = 0.7
    max_length: int = 512
    n_candidates: int = 1
    seed: int | None = None

    def __post_init__(self):
        if self.top_k < 1 or self.max_length < 1 or self.n_candidates < 1:
            raise ConfigurationError("top_k, max_length and n_candidates must be positive")
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be positive")


@dataclass(frozen=True)
class GenerationRecord:
    hate_id: str
    method: str
    text: str
    valid: bool
    params: GenerationParams
    candidates: tuple[tuple[str, bool], ...] | None = None


def build_prompt(hate_text: str, condition: str) -> tuple[str, str]:
    """Render the (system, user) prompt pair for one condition."""
    if not hate_text or not hate_text.strip():
        raise ConfigurationError("hate_text must be non-empty")
    if condition not in PROMPT_CONDITIONS:
        raise ConfigurationError(f"unknown prompt condition {condition!r}")
    return SYSTEM_PROMPT, _USER_TEMPLATES[condition].format(hate=hate_text)


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

class ChatBackend(Protocol):
    """Completes a chat prompt into ``n_candidates`` texts."""

    def complete(self, system: str, user: str, params: GenerationParams) -> list[str]: ...


class ScriptedBackend:
    """Deterministic test double.

    ``script`` maps (user prompt, candidate index, seed) to a reply; the
    default echoes a digest of its inputs so distinct prompts and candidate
    slots yield distinct, reproducible texts.
    """

    def __init__(self, script: Callable[[str, int, int | None], str] | None = None):
        self.script = script or self._default_script
        self.calls: list[tuple[str, str, GenerationParams]] = []

    @staticmethod
    def _default_script(user: str, index: int, seed: int | None) -> str:
        digest = hashlib.sha256(f"{seed}:{user}:{index}".encode("utf-8")).hexdigest()[:8]
        return f"scripted reply {digest} candidate {index}"

    def complete(self, system: str, user: str, params: GenerationParams) -> list[str]:
        self.calls.append((system, user, params))
        return [self.script(user, i, params.seed) for i in range(params.n_candidates)]


class HttpChatBackend:
    """JSON-over-HTTP chat-completion client.

    The endpoint URL and bearer token come from environment variables whose
    *names* are configuration; their values are never logged. With
    ``fan_out`` set, the n candidates are requested as concurrent
    single-candidate calls (bounded by ``max_in_flight``) and reassembled in
    request-index order.
    """

    def __init__(
        self,
        endpoint_env: str = "COUNTERSPEECH_LLM_ENDPOINT",
        token_env: str = "COUNTERSPEECH_LLM_TOKEN",
        timeout: float = 60.0,
        fan_out: bool = False,
        max_in_flight: int = 4,
    ):
        self.endpoint_env = endpoint_env
        self.token_env = token_env
        self.timeout = timeout
        self.fan_out = fan_out
        self.max_in_flight = max_in_flight

    def _endpoint(self) -> str:
        endpoint = os.environ.get(self.endpoint_env)
        if not endpoint:
            raise ConfigurationError(f"environment variable {self.endpoint_env} is not set")
        return endpoint

    def _headers(self) -> dict[str, str]:
        token = os.environ.get(self.token_env)
        return {"Authorization": f"Bearer {token}"} if token else {}

    def _request(self, system: str, user: str, params: GenerationParams, n: int) -> list[str]:
        payload = {
            "system": system,
            "user": user,
            "top_k": params.top_k,
            "temperature": params.temperature,
            "max_tokens": params.max_length,
            "n": n,
        }
        if params.seed is not None:
            payload["seed"] = params.seed
        try:
            resp = requests.post(
                self._endpoint(), json=payload, headers=self._headers(), timeout=self.timeout
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransportError(f"chat backend unreachable: {exc.__class__.__name__}") from exc
        if resp.status_code >= 500:
            raise TransportError(f"chat backend returned {resp.status_code}")
        resp.raise_for_status()
        texts = resp.json().get("texts")
        if not isinstance(texts, list) or len(texts) != n:
            raise GatewayError(f"backend returned {texts!r}, expected {n} texts")
        return [str(t) for t in texts]

    def complete(self, system: str, user: str, params: GenerationParams) -> list[str]:
        if not self.fan_out or params.n_candidates == 1:
            return self._request(system, user, params, params.n_candidates)
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            futures = [
                pool.submit(self._request, system, user, params, 1)
                for _ in range(params.n_candidates)
            ]
            return [future.result()[0] for future in futures]


class LocalPolicyBackend:
    """Adapts a trainable local policy to the chat-backend interface."""

    def __init__(self, policy):
        self.policy = policy

    def complete(self, system: str, user: str, params: GenerationParams) -> list[str]:
        return [
            self.policy.sample(
                user,
                max_new_tokens=params.max_length,
                top_k=params.top_k,
                temperature=params.temperature,
                seed=None if params.seed is None else params.seed + i,
            )
            for i in range(params.n_candidates)
        ]


def generate(
    prompt: tuple[str, str], params: GenerationParams, backend: ChatBackend
) -> list[str]:
    """Request exactly ``n_candidates`` texts; refusals are returned as-is."""
    system, user = prompt
    texts = backend.complete(system, user, params)
    if len(texts) != params.n_candidates:
        raise GatewayError(
            f"backend produced {len(texts)} candidates, expected {params.n_candidates}"
        )
    return texts


# ---------------------------------------------------------------------------
# Validity
# ---------------------------------------------------------------------------

def load_refusal_patterns(path: str | Path) -> tuple[str, ...]:
    """One pattern per line; blank lines and ``#`` comments are skipped."""
    patterns = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            patterns.append(line.lower())
    return tuple(patterns)


def is_valid_response(text: str, patterns: Sequence[str] = DEFAULT_REFUSAL_PATTERNS) -> bool:
    """False iff the text is empty/whitespace or starts with a refusal pattern."""
    stripped = text.strip().lower()
    if not stripped:
        return False
    return not any(stripped.startswith(pattern.lower()) for pattern in patterns)


def valid_response_rate(records: Sequence[GenerationRecord]) -> float:
    if not records:
        raise ValueError("valid_response_rate requires at least one record")
    return sum(1 for rec in records if rec.valid) / len(records)
