import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from counterspeech.corpus import CorpusRecord, OutcomeExample
from counterspeech.exceptions import ConfigurationError, TrainingError
from counterspeech.gateway import GenerationParams, ScriptedBackend
from counterspeech.outcome_classifier import INCIVILITY_TASK, REENTRY_TASK, OutcomePrediction
from counterspeech.policy import FinetuneConfig, TinyPolicy
from counterspeech.strategies import (
    FinetuneDatasetSpec,
    ParsedMethod,
    RewardConfig,
    TrlConfig,
    finetune,
    finetune_spec,
    format_method,
    kl_penalty,
    method_grid,
    parse_method_name,
    ppo_step,
    prepare_finetune_dataset,
    prompt_and_select,
    prompt_with_instruction,
    select_candidate,
    select_method,
    total_reward,
    trl_method,
    trl_reward,
    trl_rollout,
    trl_train,
    whiten,
    write_trl_log,
    TrlRollout,
)
from oracles import oracle_select

VOCAB = ["peace", "calm", "respect", "listen", "please", "stop", "hate", "noise"]


def hate_record(i=0):
    return CorpusRecord(
        id=f"h{i}", hate_text=f"stop the noise {i}", reply_text=None, source="synthetic"
    )


def prediction(task, label, confidence):
    conf = {l: (1.0 - confidence) / 2 for l in task.labels}
    conf[label] = confidence
    total = sum(conf.values())
    conf = {l: v / total for l, v in conf.items()}
    return OutcomePrediction(task.name, label, conf)


class MarkerClassifier:
    """Confidence in the desired label driven by a marker token."""

    def __init__(self, task=INCIVILITY_TASK, marker="peace", hit=0.9, miss=0.1):
        self.task = task
        self.marker = marker
        self.hit = hit
        self.miss = miss

    def predict(self, hate_text, reply_text):
        confidence = self.hit if self.marker in reply_text.split() else self.miss
        label = self.task.desired_label if confidence > 0.5 else self.task.labels[0]
        conf = {l: 0.0 for l in self.task.labels}
        conf[self.task.desired_label] = confidence
        remaining = 1.0 - confidence
        others = [l for l in self.task.labels if l != self.task.desired_label]
        for l in others:
            conf[l] = remaining / len(others)
        return OutcomePrediction(self.task.name, label, conf)


class TestMethodNames:
    def test_grid_is_paper_table(self):
        grid = method_grid()
        assert len(grid) == 25
        assert grid[:3] == ["baseline_generation", "effective_generation", "reentry_generation"]
        assert "effective_top10_select_reentry" in grid
        assert "bm_reddit_finetune_effective_trl" in grid
        kinds = [parse_method_name(m).kind for m in grid]
        assert kinds.count("instruction") == 3
        assert kinds.count("select") == 12
        assert kinds.count("finetune") == 6
        assert kinds.count("trl") == 4

    def test_parse_select(self):
        parsed = parse_method_name("effective_top10_select_reentry")
        assert parsed == ParsedMethod(kind="select", condition="effective", n=10, selector="reentry")

    def test_parse_trl_with_base(self):
        parsed = parse_method_name("bm_reddit_finetune_effective_trl")
        assert parsed.kind == "trl"
        assert parsed.base == "bm_reddit_finetune"
        assert parsed.target == "effective"

    def test_parse_bare_trl(self):
        parsed = parse_method_name("reentry_trl")
        assert parsed == ParsedMethod(kind="trl", target="reentry")

    def test_roundtrip_all(self):
        for name in method_grid():
            assert format_method(parse_method_name(name)) == name

    def test_bad_names_rejected(self):
        for name in ("polite_generation", "baseline_top0x_select_reentry", "foo_finetune", "x_trl", ""):
            with pytest.raises(ConfigurationError):
                parse_method_name(name)


class TestRewardAlgebra:
    def test_formula(self):
        config = RewardConfig(target_task=INCIVILITY_TASK, beta=0.2)
        breakdown = total_reward(0.8, 1.0, config)
        assert breakdown.total == pytest.approx(0.6, abs=1e-12)
        assert (breakdown.r, breakdown.kl, breakdown.beta) == (0.8, 1.0, 0.2)

    def test_beta_zero(self):
        config = RewardConfig(target_task=REENTRY_TASK, beta=0.0)
        assert total_reward(0.37, 5.0, config).total == 0.37

    def test_kl_zero(self):
        config = RewardConfig(target_task=INCIVILITY_TASK, beta=0.7)
        assert total_reward(0.42, 0.0, config).total == 0.42

    def test_negative_beta_rejected(self):
        with pytest.raises(ConfigurationError):
            RewardConfig(target_task=INCIVILITY_TASK, beta=-0.1)

    @given(st.floats(0, 1), st.floats(0, 10), st.floats(0, 5))
    def test_linear_in_kl(self, r, kl, beta):
        config = RewardConfig(target_task=INCIVILITY_TASK, beta=beta)
        assert total_reward(r, kl, config).total == r - beta * kl


class TestKlPenalty:
    def test_identical_is_exactly_zero(self):
        logprobs = [-1.5, -0.3, -2.2]
        assert kl_penalty(logprobs, logprobs) == 0.0

    def test_constant_offset(self):
        ref = [-1.0, -2.0, -3.0]
        active = [v + 0.5 for v in ref]
        assert kl_penalty(active, ref) == pytest.approx(0.5, abs=1e-12)

    def test_clamped_at_zero(self):
        ref = [-1.0, -2.0]
        active = [v - 0.2 for v in ref]
        assert kl_penalty(active, ref) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            kl_penalty([-1.0], [-1.0, -2.0])

    def test_empty_sequences(self):
        assert kl_penalty([], []) == 0.0

    @given(st.lists(st.floats(-10, 0), min_size=1, max_size=12))
    def test_self_kl_zero_property(self, logprobs):
        assert kl_penalty(logprobs, logprobs) == 0.0


class TestRewardFromClassifier:
    def test_passthrough_confidence(self):
        clf = MarkerClassifier(hit=0.7)
        assert trl_reward("hate", "peace now", clf, "low") == pytest.approx(0.7)

    def test_uniform_stub(self):
        class Uniform:
            task = INCIVILITY_TASK

            def predict(self, hate_text, reply_text):
                third = 1 / 3
                conf = {"high": third, "medium": third, "low": 1 - 2 * third}
                return OutcomePrediction("incivility", "low", conf)

        assert trl_reward("hate", "anything", Uniform(), "low") == pytest.approx(1 / 3)

    def test_refusal_scores_zero(self):
        clf = MarkerClassifier(hit=0.9)
        assert trl_reward("hate", "I cannot respond to this", clf, "low") == 0.0
        assert trl_reward("hate", "   ", clf, "low") == 0.0


class TestSelectCandidate:
    def test_highest_target_confidence(self):
        candidates = [
            ("a", prediction(INCIVILITY_TASK, "low", 0.9)),
            ("b", prediction(INCIVILITY_TASK, "low", 0.6)),
            ("c", prediction(INCIVILITY_TASK, "high", 0.7)),
        ]
        assert select_candidate(candidates, "low", random.Random(0)) == 0

    def test_random_fallback_deterministic(self):
        candidates = [
            ("a", prediction(INCIVILITY_TASK, "high", 0.9)),
            ("b", prediction(INCIVILITY_TASK, "medium", 0.8)),
        ]
        first = select_candidate(candidates, "low", random.Random(123))
        second = select_candidate(candidates, "low", random.Random(123))
        assert first == second

    def test_single_candidate(self):
        candidates = [("only", prediction(INCIVILITY_TASK, "high", 0.9))]
        assert select_candidate(candidates, "low", random.Random(5)) == 0

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            select_candidate([], "low", random.Random(0))

    def test_tie_takes_lowest_index(self):
        candidates = [
            ("a", prediction(INCIVILITY_TASK, "low", 0.8)),
            ("b", prediction(INCIVILITY_TASK, "low", 0.8)),
        ]
        assert select_candidate(candidates, "low", random.Random(0)) == 0

    @settings(max_examples=400)
    @given(
        st.lists(
            st.tuples(st.booleans(), st.floats(0.34, 0.99)),
            min_size=1,
            max_size=8,
        ),
        st.integers(0, 2**20),
    )
    def test_matches_oracle(self, raw, seed):
        candidates = []
        for i, (is_target, conf) in enumerate(raw):
            label = "low" if is_target else "high"
            candidates.append((f"text{i}", prediction(INCIVILITY_TASK, label, conf)))
        expected = oracle_select(candidates, "low")
        got = select_candidate(candidates, "low", random.Random(seed))
        if expected is not None:
            assert got == expected
        else:
            assert got == random.Random(seed).randrange(len(candidates))


class TestPromptMethods:
    def test_instruction_naming(self):
        record = prompt_with_instruction(
            hate_record(), "baseline", GenerationParams(), ScriptedBackend()
        )
        assert record.method == "baseline_generation"
        assert record.valid

    def test_refusal_flagged(self):
        backend = ScriptedBackend(script=lambda u, i, s: "I cannot engage with this.")
        record = prompt_with_instruction(hate_record(), "effective", GenerationParams(), backend)
        assert not record.valid

    def test_effective_prompt_used(self):
        backend = ScriptedBackend()
        prompt_with_instruction(hate_record(), "effective", GenerationParams(), backend)
        _, user, _ = backend.calls[0]
        assert user.endswith("low incivility in the following conversations.")

    def test_prompt_and_select_naming_and_choice(self):
        def script(user, i, seed):
            return "peace reply" if i == 2 else f"hate reply {i}"

        backend = ScriptedBackend(script=script)
        record = prompt_and_select(
            hate_record(),
            "effective",
            5,
            REENTRY_TASK,
            GenerationParams(),
            backend,
            MarkerClassifier(task=REENTRY_TASK),
            random.Random(0),
        )
        assert record.method == "effective_top5_select_reentry"
        assert record.text == "peace reply"
        assert record.valid
        assert len(record.candidates) == 5

    def test_all_invalid_candidates(self):
        backend = ScriptedBackend(script=lambda u, i, s: "I cannot.")
        record = prompt_and_select(
            hate_record(),
            "baseline",
            5,
            INCIVILITY_TASK,
            GenerationParams(),
            backend,
            MarkerClassifier(),
            random.Random(0),
        )
        assert not record.valid

    def test_classifier_error_excludes_candidate(self):
        class Flaky:
            task = INCIVILITY_TASK

            def predict(self, hate_text, reply_text):
                if "0" in reply_text:
                    raise RuntimeError("provider down")
                return MarkerClassifier().predict(hate_text, reply_text)

        backend = ScriptedBackend(script=lambda u, i, s: f"peace reply {i}")
        record = prompt_and_select(
            hate_record(),
            "baseline",
            3,
            INCIVILITY_TASK,
            GenerationParams(),
            backend,
            Flaky(),
            random.Random(0),
        )
        assert record.valid
        assert record.text != "peace reply 0"

    def test_select_grid_is_twelve(self):
        names = {
            select_method(cond, n, selector)
            for cond in ("baseline", "effective", "reentry")
            for n in (5, 10)
            for selector in ("effective", "reentry")
        }
        assert len(names) == 12
        assert names == {m for m in method_grid() if parse_method_name(m).kind == "select"}


class TestFinetuneData:
    def outcome_data(self):
        rows = []
        for i in range(10):
            rows.append(
                OutcomeExample(
                    id=f"o{i}",
                    hate_text=f"hate {i}",
                    reply_text=f"reply {i}",
                    incivility_label="low" if i < 3 else "high",
                    reentry_label="nonhate_reentry" if i < 2 else "hate_reentry",
                )
            )
        return rows

    def test_effective_filter(self):
        pairs = prepare_finetune_dataset(finetune_spec("effective"), {}, self.outcome_data())
        assert len(pairs) == 3

    def test_reentry_filter(self):
        pairs = prepare_finetune_dataset(finetune_spec("reentry"), {}, self.outcome_data())
        assert len(pairs) == 2

    def test_passthrough_uses_training_split(self):
        records = [
            CorpusRecord(
                id=f"b{i}",
                hate_text=f"hate {i}",
                reply_text=f"reply {i}",
                source="benchmark_reddit",
                split="train" if i < 4 else "test",
            )
            for i in range(6)
        ]
        pairs = prepare_finetune_dataset(
            finetune_spec("bm_reddit"), {"benchmark_reddit": records}, []
        )
        assert len(pairs) == 4

    def test_empty_filter_errors(self):
        examples = [
            OutcomeExample(
                id="x", hate_text="h", reply_text="r", reentry_label="hate_reentry"
            )
        ]
        with pytest.raises(ConfigurationError, match="reentry"):
            prepare_finetune_dataset(finetune_spec("reentry"), {}, examples)

    def test_spec_invariants(self):
        with pytest.raises(ConfigurationError):
            FinetuneDatasetSpec(name="effective", filter="pass-through")
        assert finetune_spec("conan").filter == "pass-through"

    def test_dataset_file_roundtrip(self, tmp_path):
        from counterspeech.strategies import load_finetune_dataset, write_finetune_dataset

        pairs = [("hate one", "reply one"), ("hate two", "reply two")]
        path = tmp_path / "pairs.jsonl"
        write_finetune_dataset(pairs, path)
        import json

        first = json.loads(path.read_text().splitlines()[0])
        assert set(first) == {"prompt", "completion"}
        assert load_finetune_dataset(path) == pairs


class TestFinetune:
    def test_base_unmodified_and_loss_drops(self):
        base = TinyPolicy(VOCAB)
        before = base.weights.copy()
        pairs = [("stop the noise", "peace calm"), ("hate noise", "respect listen")] * 25
        trained = finetune(base, pairs, FinetuneConfig(epochs=15))
        assert (base.weights == before).all()
        assert trained.last_loss_history[-1] < trained.last_loss_history[0]

    def test_zero_epochs_behaviorally_identical(self):
        base = TinyPolicy(VOCAB)
        trained = finetune(base, [("stop", "peace")], FinetuneConfig(epochs=0))
        for seed in range(5):
            assert trained.sample("stop the hate", seed=seed) == base.sample(
                "stop the hate", seed=seed
            )

    def test_overfit_greedy_decode(self):
        base = TinyPolicy(VOCAB)
        trained = finetune(
            base,
            [("stop the noise", "peace calm respect")] * 8,
            FinetuneConfig(epochs=300, learning_rate=2.0),
        )
        assert trained.greedy("stop the noise", max_new_tokens=5) == "peace calm respect"

    def test_empty_dataset(self):
        with pytest.raises(TrainingError):
            finetune(TinyPolicy(VOCAB), [], FinetuneConfig())


class TestTrlPieces:
    def test_rollout_deterministic(self):
        policy = TinyPolicy(VOCAB)
        assert trl_rollout(policy, "stop the hate", seed=3) == trl_rollout(
            policy, "stop the hate", seed=3
        )

    def test_rollout_empty_prompt_errors(self):
        with pytest.raises(ValueError):
            trl_rollout(TinyPolicy(VOCAB), "  ")

    def test_rollout_vocabulary_membership(self):
        text = trl_rollout(TinyPolicy(VOCAB), "noise hate", max_new_tokens=16, seed=5)
        assert all(tok in VOCAB for tok in text.split())

    def test_whiten_all_equal_is_zero(self):
        assert whiten([0.4, 0.4, 0.4]) == [0.0, 0.0, 0.0]

    def test_whiten_moments(self):
        values = whiten([1.0, 2.0, 3.0, 4.0])
        assert np.mean(values) == pytest.approx(0.0, abs=1e-12)
        assert np.std(values) == pytest.approx(1.0, abs=1e-12)


def make_rollout(policy, prompt, response, reward_value, config):
    active = tuple(policy.logprobs(prompt, response))
    return TrlRollout(
        hate_text=prompt,
        response=response,
        active_logprobs=active,
        reference_logprobs=active,
        reward=total_reward(reward_value, 0.0, config),
    )


class TestPpoStep:
    def test_equal_rewards_noop(self):
        policy = TinyPolicy(VOCAB)
        reference = policy.clone()
        config = RewardConfig(target_task=INCIVILITY_TASK, beta=0.0)
        before = policy.weights.tobytes()
        batch = [
            make_rollout(policy, "stop", "peace calm", 0.5, config),
            make_rollout(policy, "stop", "hate noise", 0.5, config),
        ]
        ppo_step(policy, reference, batch)
        assert policy.weights.tobytes() == before

    def test_marker_probability_increases(self):
        policy = TinyPolicy(VOCAB)
        reference = policy.clone()
        config = RewardConfig(target_task=INCIVILITY_TASK, beta=0.0)
        batch = [
            make_rollout(policy, "stop", "peace", 1.0, config),
            make_rollout(policy, "stop", "hate", 0.0, config),
        ]
        prev, target = policy._index["stop"], policy._index["peace"]
        before = policy._log_softmax_row(prev)[target]
        ppo_step(policy, reference, batch, learning_rate=0.5)
        assert policy._log_softmax_row(prev)[target] > before

    def test_reference_untouched(self):
        policy = TinyPolicy(VOCAB)
        reference = policy.clone()
        ref_bytes = reference.weights.tobytes()
        config = RewardConfig(target_task=INCIVILITY_TASK, beta=0.0)
        batch = [
            make_rollout(policy, "stop", "peace", 1.0, config),
            make_rollout(policy, "stop", "hate", 0.0, config),
        ]
        ppo_step(policy, reference, batch)
        assert reference.weights.tobytes() == ref_bytes

    def test_empty_batch_errors(self):
        policy = TinyPolicy(VOCAB)
        with pytest.raises(TrainingError):
            ppo_step(policy, policy.clone(), [])


class TestTrlTrain:
    def test_learning_curve_improves(self):
        base = TinyPolicy(VOCAB)
        classifier = MarkerClassifier(hit=1.0, miss=0.0)
        config = TrlConfig(
            reward=RewardConfig(target_task=INCIVILITY_TASK, beta=0.02),
            prompts=["stop the noise", "hate hate noise"],
            max_steps=120,
            batch_size=16,
            learning_rate=1.0,
            seed=11,
            max_new_tokens=6,
            stop_window=1000,
        )
        trained, log = trl_train(base, classifier, config)
        assert log[-1].mean_total - log[0].mean_total >= 0.2

    def test_zero_steps_identity(self):
        base = TinyPolicy(VOCAB)
        config = TrlConfig(
            reward=RewardConfig(target_task=INCIVILITY_TASK, beta=0.1),
            prompts=["stop"],
            max_steps=0,
        )
        trained, log = trl_train(base, MarkerClassifier(), config)
        assert log == []
        assert (trained.weights == base.weights).all()

    def test_reference_probe_invariance(self):
        base = TinyPolicy(VOCAB)
        probes = [base.sample("stop the noise", seed=s) for s in range(5)]
        config = TrlConfig(
            reward=RewardConfig(target_task=INCIVILITY_TASK, beta=0.05),
            prompts=["stop the noise"],
            max_steps=20,
            batch_size=8,
            seed=2,
        )
        trl_train(base, MarkerClassifier(), config)
        assert [base.sample("stop the noise", seed=s) for s in range(5)] == probes

    def test_log_csv(self, tmp_path):
        base = TinyPolicy(VOCAB)
        config = TrlConfig(
            reward=RewardConfig(target_task=INCIVILITY_TASK, beta=0.0),
            prompts=["stop"],
            max_steps=3,
            batch_size=4,
            seed=0,
        )
        _, log = trl_train(base, MarkerClassifier(), config)
        path = tmp_path / "trl.csv"
        write_trl_log(log, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "step,mean_r,mean_kl,mean_total"
        assert len(lines) == 4

    def test_method_naming_with_base(self):
        assert trl_method("effective", base="bm_reddit_finetune") == "bm_reddit_finetune_effective_trl"
        assert trl_method("reentry") == "reentry_trl"

    def test_early_stop_on_stability(self):
        base = TinyPolicy(VOCAB)

        class Constant:
            task = INCIVILITY_TASK

            def predict(self, hate_text, reply_text):
                return OutcomePrediction(
                    "incivility", "low", {"high": 0.25, "medium": 0.25, "low": 0.5}
                )

        config = TrlConfig(
            reward=RewardConfig(target_task=INCIVILITY_TASK, beta=0.0),
            prompts=["stop"],
            max_steps=500,
            batch_size=4,
            stop_window=5,
            stop_tolerance=1e-6,
            seed=1,
        )
        _, log = trl_train(base, Constant(), config)
        assert len(log) < 500
