import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from counterspeech.corpus import (
    ConversationThread,
    CorpusRecord,
    CorpusFormatError,
    FollowUp,
    OutcomeExample,
    RawConversation,
    extract_pairs,
    label_incivility,
    label_reentry,
    load_corpus,
    load_outcomes,
    split_corpus,
    write_corpus,
    write_outcomes,
)
from counterspeech.exceptions import ConfigurationError, LabelingError


def make_record(i, **kwargs):
    defaults = dict(
        id=f"r{i}",
        hate_text=f"hateful comment {i}",
        reply_text=f"reply {i}",
        source="synthetic",
    )
    defaults.update(kwargs)
    return CorpusRecord(**defaults)


def hate_record(i="0", **kwargs):
    return make_record(i, **kwargs)


class TestRecordInvariants:
    def test_empty_hate_text_rejected(self):
        with pytest.raises(CorpusFormatError):
            CorpusRecord(id="x", hate_text="  ", reply_text="r", source="synthetic")

    def test_unknown_source_rejected(self):
        with pytest.raises(CorpusFormatError):
            CorpusRecord(id="x", hate_text="h", reply_text="r", source="twitter")

    def test_outcome_example_needs_a_label(self):
        with pytest.raises(CorpusFormatError):
            OutcomeExample(id="x", hate_text="h", reply_text="r")

    def test_outcome_example_single_label_ok(self):
        ex = OutcomeExample(id="x", hate_text="h", reply_text="r", incivility_label="low")
        assert ex.reentry_label is None


class TestLoadCorpus:
    def test_normalized_identity_ingestion(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        records = [make_record(i) for i in range(3)]
        write_corpus(records, path)
        loaded = load_corpus(path, "synthetic")
        assert loaded == records

    def test_error_names_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        rows = [
            {"id": "a", "hate_text": "ok", "reply_text": "r", "source": "synthetic"},
            {"id": "b", "hate_text": "", "reply_text": "r", "source": "synthetic"},
        ]
        path.write_text("\n".join(json.dumps(r) for r in rows))
        with pytest.raises(CorpusFormatError, match="line 2"):
            load_corpus(path, "synthetic")

    def test_unknown_format(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text("{}")
        with pytest.raises(ConfigurationError):
            load_corpus(path, "4chan")

    def test_benchmark_conversation_expansion(self, tmp_path):
        path = tmp_path / "bench.jsonl"
        conv = {
            "id": "c1",
            "text": ["fine comment", "awful hate", "another comment"],
            "hate_speech_idx": [1],
            "response": ["pushback one", "pushback two"],
        }
        path.write_text(json.dumps(conv))
        loaded = load_corpus(path, "benchmark_reddit")
        assert len(loaded) == 2
        assert {r.hate_text for r in loaded} == {"awful hate"}
        assert all(r.source == "benchmark_reddit" for r in loaded)

    def test_conan_keys(self, tmp_path):
        path = tmp_path / "conan.jsonl"
        path.write_text(json.dumps({"hate_speech": "h", "counter_speech": "c"}))
        loaded = load_corpus(path, "conan")
        assert loaded[0].reply_text == "c"

    def test_duplicate_ids_rejected(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        row = {"id": "a", "hate_text": "h", "reply_text": "r", "source": "synthetic"}
        path.write_text(json.dumps(row) + "\n" + json.dumps(row))
        with pytest.raises(CorpusFormatError, match="duplicate"):
            load_corpus(path, "synthetic")

    def test_roundtrip_outcomes(self, tmp_path):
        path = tmp_path / "outcomes.jsonl"
        examples = [
            OutcomeExample(id="1", hate_text="h", reply_text="r", incivility_label="low"),
            OutcomeExample(id="2", hate_text="h", reply_text="r", reentry_label="no_reentry"),
        ]
        write_outcomes(examples, path)
        assert load_outcomes(path) == examples


class TestExtractPairs:
    def test_one_hate_three_responses(self):
        conv = RawConversation(
            id="c",
            comments=("x", "hate"),
            hate_indices=(1,),
            responses={1: ("r1", "r2", "r3")},
        )
        assert len(extract_pairs(conv)) == 3

    def test_two_hate_two_each(self):
        conv = RawConversation(
            id="c",
            comments=("h1", "h2"),
            hate_indices=(0, 1),
            responses={0: ("a", "b"), 1: ("c", "d")},
        )
        records = extract_pairs(conv)
        assert len(records) == 4
        by_hate = {}
        for rec in records:
            by_hate.setdefault(rec.hate_text, []).append(rec.reply_text)
        assert by_hate == {"h1": ["a", "b"], "h2": ["c", "d"]}

    def test_no_responses(self):
        conv = RawConversation(id="c", comments=("hate",), hate_indices=(0,), responses={})
        assert extract_pairs(conv) == []

    def test_no_marked_hate(self):
        conv = RawConversation(id="c", comments=("fine",), hate_indices=(), responses={})
        assert extract_pairs(conv) == []


class TestSplitCorpus:
    def test_eighty_twenty(self):
        records = [make_record(i) for i in range(10)]
        train, test = split_corpus(records, 0.8, seed=13)
        assert len(train) == 8
        assert len(test) == 2

    def test_determinism(self):
        records = [make_record(i) for i in range(25)]
        first = split_corpus(records, 0.8, seed=13)
        second = split_corpus(records, 0.8, seed=13)
        assert first == second

    def test_round_arithmetic_full_scale(self):
        assert round(0.8 * 14208) == 11366  # 14208-pair corpus splits 11366/2842

    def test_fraction_bounds(self):
        with pytest.raises(ConfigurationError):
            split_corpus([make_record(0)], 1.0, seed=1)

    def test_split_assigns_split_field(self):
        train, test = split_corpus([make_record(i) for i in range(4)], 0.5, seed=0)
        assert all(r.split == "train" for r in train)
        assert all(r.split == "test" for r in test)

    def test_stable_across_input_order(self):
        records = [make_record(i) for i in range(12)]
        train_a, test_a = split_corpus(records, 0.75, seed=5)
        train_b, test_b = split_corpus(list(reversed(records)), 0.75, seed=5)
        assert train_a == train_b
        assert test_a == test_b

    @given(
        st.integers(2, 60),
        st.floats(0.05, 0.95),
        st.integers(0, 2**31),
    )
    def test_partition_property(self, n, fraction, seed):
        records = [make_record(i) for i in range(n)]
        train, test = split_corpus(records, fraction, seed)
        assert len(train) == round(fraction * n)
        assert len(train) + len(test) == n
        ids = {r.id for r in train} | {r.id for r in test}
        assert ids == {r.id for r in records}


def thread(followups, hater_id="hater"):
    return ConversationThread(
        hate_comment=hate_record(),
        reply_text="calm reply",
        hater_id=hater_id,
        followups=tuple(followups),
    )


class TestLabelIncivility:
    def test_popular_and_calm_is_low(self):
        followups = [FollowUp(f"u{i}", "text", False) for i in range(10)]
        assert label_incivility(thread(followups), (2, 5), 0.25) == "low"

    def test_hateful_fraction_is_high(self):
        followups = [FollowUp("u", "t", True)] * 3 + [FollowUp("v", "t", False)]
        assert label_incivility(thread(followups), (2, 5), 0.25) == "high"

    def test_zero_followups_is_medium(self):
        assert label_incivility(thread([])) == "medium"

    def test_unordered_cutoffs_rejected(self):
        with pytest.raises(ConfigurationError):
            label_incivility(thread([]), (5, 2), 0.25)

    @given(st.integers(0, 20), st.integers(0, 20))
    def test_depends_only_on_counts(self, n_calm, n_hate):
        followups_a = [FollowUp(f"a{i}", "x", False) for i in range(n_calm)] + [
            FollowUp(f"h{i}", "y", True) for i in range(n_hate)
        ]
        followups_b = [FollowUp(f"b{i}", "completely different words", False) for i in range(n_calm)] + [
            FollowUp(f"g{i}", "other text entirely", True) for i in range(n_hate)
        ]
        assert label_incivility(thread(followups_a)) == label_incivility(thread(followups_b))


class TestLabelReentry:
    def test_no_reentry(self):
        followups = [FollowUp("someone_else", "t", False)]
        assert label_reentry(thread(followups)) == "no_reentry"

    def test_hate_reentry(self):
        followups = [FollowUp("hater", "t", False), FollowUp("hater", "t", True)]
        assert label_reentry(thread(followups)) == "hate_reentry"

    def test_nonhate_reentry(self):
        followups = [FollowUp("hater", "t", False)]
        assert label_reentry(thread(followups)) == "nonhate_reentry"

    def test_missing_hater_errors(self):
        with pytest.raises(LabelingError):
            label_reentry(thread([], hater_id=None))

    @given(
        st.lists(
            st.tuples(st.sampled_from(["hater", "other"]), st.booleans()),
            max_size=8,
        )
    )
    def test_exhaustive_and_exclusive(self, raw):
        followups = [FollowUp(author, "t", hateful) for author, hateful in raw]
        label = label_reentry(thread(followups))
        assert label in ("hate_reentry", "no_reentry", "nonhate_reentry")
        own = [f for f in followups if f.author_id == "hater"]
        if not own:
            assert label == "no_reentry"
        elif any(f.is_hateful for f in own):
            assert label == "hate_reentry"
        else:
            assert label == "nonhate_reentry"
