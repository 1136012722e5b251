"""The four outcome-constrained generation methods.

Prompt-with-instruction, prompt-and-select (candidate reranking by an
outcome classifier), supervised finetuning of a trainable policy, and the
reinforcement-learning loop (rollout, classifier reward, KL penalty against
a frozen reference, clipped policy-gradient step).
"""

from __future__ import annotations

import csv
import json
import logging
import random
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import CorpusRecord, OutcomeExample
from .exceptions import ConfigurationError, TrainingError
from .gateway import (
    PROMPT_CONDITIONS,
    ChatBackend,
    GenerationParams,
    GenerationRecord,
    build_prompt,
    generate,
    is_valid_response,
)
from .outcome_classifier import OutcomeClassifier, OutcomePrediction, OutcomeTask
from .policy import FinetuneConfig, PpoSample, PpoUpdateConfig, TrainablePolicy

logger = logging.getLogger(__name__)

FINETUNE_DATASETS = ("effective", "reentry", "conan", "multiconan", "bm_reddit", "bm_gab")
OUTCOME_TAGS = ("effective", "reentry")

_DATASET_SOURCES = {
    "conan": "conan",
    "multiconan": "multiconan",
    "bm_reddit": "benchmark_reddit",
    "bm_gab": "benchmark_gab",
}

_SELECT_RE = re.compile(r"^(baseline|effective|reentry)_top(\d+)_select_(effective|reentry)$")


# ---------------------------------------------------------------------------
# Method names
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParsedMethod:
    kind: str  # instruction | select | finetune | trl
    condition: str | None = None
    n: int | None = None
    selector: str | None = None
    dataset: str | None = None
    base: str | None = None
    target: str | None = None


def instruction_method(condition: str) -> str:
    return f"{condition}_generation"


def select_method(condition: str, n: int, selector: str) -> str:
    return f"{condition}_top{n}_select_{selector}"


def finetune_method(dataset: str) -> str:
    return f"{dataset}_finetune"


def trl_method(target: str, base: str | None = None) -> str:
    return f"{base}_{target}_trl" if base else f"{target}_trl"


def format_method(parsed: ParsedMethod) -> str:
    if parsed.kind == "instruction":
        return instruction_method(parsed.condition)
    if parsed.kind == "select":
        return select_method(parsed.condition, parsed.n, parsed.selector)
    if parsed.kind == "finetune":
        return finetune_method(parsed.dataset)
    if parsed.kind == "trl":
        return trl_method(parsed.target, parsed.base)
    raise ConfigurationError(f"unknown method kind {parsed.kind!r}")


def parse_method_name(name: str) -> ParsedMethod:
    if name.endswith("_generation"):
        condition = name[: -len("_generation")]
        if condition in PROMPT_CONDITIONS:
            return ParsedMethod(kind="instruction", condition=condition)
    match = _SELECT_RE.match(name)
    if match:
        return ParsedMethod(
            kind="select",
            condition=match.group(1),
            n=int(match.group(2)),
            selector=match.group(3),
        )
    if name.endswith("_trl"):
        core = name[: -len("_trl")]
        if core in OUTCOME_TAGS:
            return ParsedMethod(kind="trl", target=core)
        for target in OUTCOME_TAGS:
            suffix = f"_{target}"
            if core.endswith(suffix):
                base = core[: -len(suffix)]
                base_parsed = parse_method_name(base)
                if base_parsed.kind == "finetune":
                    return ParsedMethod(kind="trl", target=target, base=base)
    if name.endswith("_finetune"):
        dataset = name[: -len("_finetune")]
        if dataset in FINETUNE_DATASETS:
            return ParsedMethod(kind="finetune", dataset=dataset)
    raise ConfigurationError(f"method name {name!r} does not follow the naming scheme")


def method_grid() -> list[str]:
    """The full experiment grid: 3 instruction, 12 select, 6 finetune, 4 TRL."""
    methods = [instruction_method(cond) for cond in PROMPT_CONDITIONS]
    for n in (5, 10):
        for selector in OUTCOME_TAGS:
            for cond in PROMPT_CONDITIONS:
                methods.append(select_method(cond, n, selector))
    methods.extend(finetune_method(ds) for ds in FINETUNE_DATASETS)
    methods.append(trl_method("effective"))
    methods.append(trl_method("reentry"))
    methods.append(trl_method("effective", base=finetune_method("bm_reddit")))
    methods.append(trl_method("reentry", base=finetune_method("bm_reddit")))
    return methods


# ---------------------------------------------------------------------------
# Rewards
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RewardConfig:
    target_task: OutcomeTask
    beta: float

    def __post_init__(self):
        if self.beta < 0:
            raise ConfigurationError("beta must be non-negative")

    @property
    def target_label(self) -> str:
        return self.target_task.desired_label


@dataclass(frozen=True)
class RewardBreakdown:
    r: float
    kl: float
    beta: float
    total: float

    def __post_init__(self):
        if self.kl < 0:
            raise ValueError("kl must be non-negative")
        if self.total != self.r - self.beta * self.kl:
            raise ValueError("total must equal r - beta*kl")


def total_reward(r: float, kl: float, config: RewardConfig) -> RewardBreakdown:
    if kl < 0:
        raise ValueError("kl must be non-negative")
    return RewardBreakdown(r=r, kl=kl, beta=config.beta, total=r - config.beta * kl)


def trl_reward(
    hate_text: str,
    response: str,
    classifier: OutcomeClassifier,
    target_label: str,
) -> float:
    """Classifier confidence in the desired label; invalid responses earn 0."""
    if not is_valid_response(response):
        return 0.0
    prediction = classifier.predict(hate_text, response)
    return float(prediction.confidence[target_label])


def kl_penalty(
    active_logprobs: Sequence[float], reference_logprobs: Sequence[float]
) -> float:
    """Mean sampled-token logprob difference, clamped at zero from below."""
    if len(active_logprobs) != len(reference_logprobs):
        raise ValueError("logprob sequences must have equal length")
    if not active_logprobs:
        return 0.0
    mean_diff = sum(a - b for a, b in zip(active_logprobs, reference_logprobs)) / len(
        active_logprobs
    )
    return max(0.0, mean_diff)


# ---------------------------------------------------------------------------
# Prompt-based methods
# ---------------------------------------------------------------------------

def prompt_with_instruction(
    hate: CorpusRecord,
    condition: str,
    params: GenerationParams,
    backend: ChatBackend,
) -> GenerationRecord:
    single = replace(params, n_candidates=1)
    text = generate(build_prompt(hate.hate_text, condition), single, backend)[0]
    return GenerationRecord(
        hate_id=hate.id,
        method=instruction_method(condition),
        text=text,
        valid=is_valid_response(text),
        params=single,
    )


def select_candidate(
    candidates: Sequence[tuple[str, OutcomePrediction]],
    target_label: str,
    rng: random.Random,
) -> int:
    """Best target-labeled candidate by confidence; seeded-random fallback."""
    if not candidates:
        raise ValueError("cannot select from an empty candidate list")
    hits = [i for i, (_, pred) in enumerate(candidates) if pred.label == target_label]
    if hits:
        best = hits[0]
        for i in hits[1:]:
            if candidates[i][1].confidence[target_label] > candidates[best][1].confidence[target_label]:
                best = i
        return best
    return rng.randrange(len(candidates))


def prompt_and_select(
    hate: CorpusRecord,
    condition: str,
    n: int,
    selector_task: OutcomeTask,
    params: GenerationParams,
    backend: ChatBackend,
    classifier: OutcomeClassifier,
    rng: random.Random,
) -> GenerationRecord:
    if n < 1:
        raise ConfigurationError("candidate count must be at least 1")
    texts = generate(build_prompt(hate.hate_text, condition), replace(params, n_candidates=n), backend)
    flagged = tuple((text, is_valid_response(text)) for text in texts)
    pool: list[tuple[int, str, OutcomePrediction]] = []
    for idx, (text, valid) in enumerate(flagged):
        if not valid:
            continue
        try:
            pool.append((idx, text, classifier.predict(hate.hate_text, text)))
        except Exception:
            logger.warning(
                "classifier failed on candidate %d for %s; excluded from selection",
                idx,
                hate.id,
                exc_info=True,
            )
    method = select_method(condition, n, selector_task.tag)
    if not pool:
        return GenerationRecord(
            hate_id=hate.id,
            method=method,
            text=texts[0],
            valid=False,
            params=replace(params, n_candidates=n),
            candidates=flagged,
        )
    chosen = select_candidate(
        [(text, pred) for _, text, pred in pool], selector_task.desired_label, rng
    )
    return GenerationRecord(
        hate_id=hate.id,
        method=method,
        text=pool[chosen][1],
        valid=True,
        params=replace(params, n_candidates=n),
        candidates=flagged,
    )


# ---------------------------------------------------------------------------
# Finetuning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FinetuneDatasetSpec:
    name: str
    filter: str

    def __post_init__(self):
        if self.name not in FINETUNE_DATASETS:
            raise ConfigurationError(f"unknown finetune dataset {self.name!r}")
        expected = _expected_filter(self.name)
        if self.filter != expected:
            raise ConfigurationError(
                f"dataset {self.name!r} must use filter {expected!r}, got {self.filter!r}"
            )


def _expected_filter(name: str) -> str:
    if name == "effective":
        return "incivility=low"
    if name == "reentry":
        return "reentry=nonhate_reentry"
    return "pass-through"


def finetune_spec(name: str) -> FinetuneDatasetSpec:
    return FinetuneDatasetSpec(name=name, filter=_expected_filter(name))


def prepare_finetune_dataset(
    spec: FinetuneDatasetSpec,
    corpora: Mapping[str, Sequence[CorpusRecord]],
    outcome_data: Sequence[OutcomeExample] = (),
) -> list[tuple[str, str]]:
    """Hate-comment prompts paired with reply completions for one config."""
    if spec.name == "effective":
        pairs = [
            (ex.hate_text, ex.reply_text)
            for ex in outcome_data
            if ex.incivility_label == "low"
        ]
    elif spec.name == "reentry":
        pairs = [
            (ex.hate_text, ex.reply_text)
            for ex in outcome_data
            if ex.reentry_label == "nonhate_reentry"
        ]
    else:
        source = _DATASET_SOURCES[spec.name]
        records = corpora.get(source)
        if records is None:
            raise ConfigurationError(f"corpus source {source!r} required by {spec.name} is missing")
        pairs = [
            (rec.hate_text, rec.reply_text)
            for rec in records
            if rec.split == "train" and rec.reply_text
        ]
    if not pairs:
        raise ConfigurationError(f"finetune spec {spec.name!r} produced an empty dataset")
    return pairs


def write_finetune_dataset(pairs: Sequence[tuple[str, str]], path: str | Path) -> None:
    """JSONL with one {prompt, completion} object per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for prompt, completion in pairs:
            fh.write(
                json.dumps({"prompt": prompt, "completion": completion}, ensure_ascii=False)
                + "\n"
            )


def load_finetune_dataset(path: str | Path) -> list[tuple[str, str]]:
    pairs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            row = json.loads(line)
            pairs.append((row["prompt"], row["completion"]))
    return pairs


def finetune(
    base: TrainablePolicy,
    dataset: Sequence[tuple[str, str]],
    config: FinetuneConfig | None = None,
) -> TrainablePolicy:
    """Supervised next-token training on a copy; the base stays unmodified."""
    if not dataset:
        raise TrainingError("finetune dataset is empty")
    trained = base.clone()
    trained.supervised_update(dataset, config or FinetuneConfig())
    return trained


# ---------------------------------------------------------------------------
# Reinforcement learning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrlRollout:
    hate_text: str
    response: str
    active_logprobs: tuple[float, ...]
    reference_logprobs: tuple[float, ...]
    reward: RewardBreakdown


@dataclass
class TrlConfig:
    reward: RewardConfig
    prompts: Sequence[str]
    max_steps: int = 200
    batch_size: int = 8
    learning_rate: float = 0.5
    clip_range: float = 0.2
    epochs_per_batch: int = 1
    stop_window: int = 20
    stop_tolerance: float = 1e-3
    seed: int = 0
    max_new_tokens: int = 12
    top_k: int | None = None
    temperature: float = 1.0
    base_method: str | None = None


@dataclass(frozen=True)
class TrlStepStats:
    step: int
    mean_r: float
    mean_kl: float
    mean_total: float


def trl_rollout(
    policy: TrainablePolicy,
    hate_text: str,
    max_new_tokens: int = 12,
    top_k: int | None = None,
    temperature: float = 1.0,
    seed: int | None = None,
) -> str:
    """Sample a response to the hate prompt from the policy."""
    if not hate_text or not hate_text.strip():
        raise ValueError("hate_text must be non-empty")
    return policy.sample(
        hate_text,
        max_new_tokens=max_new_tokens,
        top_k=top_k,
        temperature=temperature,
        seed=seed,
    )


def whiten(values: Sequence[float]) -> list[float]:
    """Zero-mean unit-variance rescaling; all-equal inputs map to all zeros."""
    arr = np.asarray(values, dtype=np.float64)
    if np.all(arr == arr[0]):
        return [0.0] * len(values)
    return list((arr - arr.mean()) / arr.std())


def ppo_step(
    policy: TrainablePolicy,
    reference_policy: TrainablePolicy,
    batch: Sequence[TrlRollout],
    learning_rate: float = 0.5,
    clip_range: float = 0.2,
    epochs: int = 1,
) -> dict:
    """One clipped-surrogate update with batch-whitened total rewards."""
    if not batch:
        raise TrainingError("ppo_step requires a non-empty batch")
    advantages = whiten([rollout.reward.total for rollout in batch])
    samples = [
        PpoSample(
            prompt=rollout.hate_text,
            response=rollout.response,
            old_logprobs=rollout.active_logprobs,
            advantage=advantage,
        )
        for rollout, advantage in zip(batch, advantages)
    ]
    return policy.ppo_update(
        samples,
        PpoUpdateConfig(learning_rate=learning_rate, clip_range=clip_range, epochs=epochs),
    )


def trl_train(
    base: TrainablePolicy,
    classifier: OutcomeClassifier,
    config: TrlConfig,
) -> tuple[TrainablePolicy, list[TrlStepStats]]:
    """Rollout -> reward -> update until reward stabilizes or steps run out.

    The reference policy is a frozen clone of the base; the returned policy
    is a separate clone, so the base handle is never mutated.
    """
    if not config.prompts:
        raise ConfigurationError("trl training requires at least one prompt")
    active = base.clone()
    reference = base.clone()
    rng = np.random.default_rng(config.seed)
    log: list[TrlStepStats] = []
    for step in range(config.max_steps):
        batch: list[TrlRollout] = []
        for _ in range(config.batch_size):
            prompt = config.prompts[int(rng.integers(len(config.prompts)))]
            rollout_seed = int(rng.integers(2**31 - 1))
            response = trl_rollout(
                active,
                prompt,
                max_new_tokens=config.max_new_tokens,
                top_k=config.top_k,
                temperature=config.temperature,
                seed=rollout_seed,
            )
            active_lp = tuple(active.logprobs(prompt, response))
            reference_lp = tuple(reference.logprobs(prompt, response))
            r = trl_reward(prompt, response, classifier, config.reward.target_label)
            kl = kl_penalty(active_lp, reference_lp)
            batch.append(
                TrlRollout(
                    hate_text=prompt,
                    response=response,
                    active_logprobs=active_lp,
                    reference_logprobs=reference_lp,
                    reward=total_reward(r, kl, config.reward),
                )
            )
        log.append(
            TrlStepStats(
                step=step,
                mean_r=sum(b.reward.r for b in batch) / len(batch),
                mean_kl=sum(b.reward.kl for b in batch) / len(batch),
                mean_total=sum(b.reward.total for b in batch) / len(batch),
            )
        )
        ppo_step(
            active,
            reference,
            batch,
            learning_rate=config.learning_rate,
            clip_range=config.clip_range,
            epochs=config.epochs_per_batch,
        )
        if _reward_stabilized(log, config.stop_window, config.stop_tolerance):
            break
    return active, log


def _reward_stabilized(log: Sequence[TrlStepStats], window: int, tolerance: float) -> bool:
    if len(log) < 2 * window:
        return False
    recent = sum(s.mean_total for s in log[-window:]) / window
    previous = sum(s.mean_total for s in log[-2 * window : -window]) / window
    return abs(recent - previous) < tolerance


def write_trl_log(log: Sequence[TrlStepStats], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "mean_r", "mean_kl", "mean_total"])
        for stats in log:
            writer.writerow(
                [stats.step, f"{stats.mean_r:.10g}", f"{stats.mean_kl:.10g}", f"{stats.mean_total:.10g}"]
            )
