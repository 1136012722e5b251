"""Property tests for the metric suite."""



import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from counterspeech.metrics import (
    HeuristicAcceptabilityScorer,
    OneHotEmbedder,
    aggregate,
    bert_score_tokens,
    bleu,
    bleu_tokens,
    gruen,
    meteor,
    meteor_tokens,
    novelty,
    rouge,
    rouge_tokens,
    stem,
)
from oracles import oracle_bleu, oracle_meteor, oracle_rouge_l, oracle_rouge_n

tokens = st.lists(st.sampled_from(["a", "b", "c"]), min_size=0, max_size=6).map(tuple)
nonempty_tokens = st.lists(st.sampled_from(["a", "b", "c"]), min_size=1, max_size=6).map(tuple)
words = st.lists(
    st.sampled_from(["Hate", "speech", "Hurts", "people", "ONLINE", "reply"]),
    min_size=1,
    max_size=8,
)


@given(words, words)
def test_relevance_case_invariant(cand_words, ref_words):
    cand, ref = " ".join(cand_words), " ".join(ref_words)
    assert bleu(cand, [ref]) == pytest.approx(bleu(cand.upper(), [ref.lower()]), abs=1e-12)
    assert meteor(cand, ref) == pytest.approx(meteor(cand.upper(), ref.lower()), abs=1e-12)
    up = rouge(cand.upper(), ref.lower())
    low = rouge(cand, ref)
    assert up.rouge_1.f1 == pytest.approx(low.rouge_1.f1, abs=1e-12)
    assert up.rouge_l.f1 == pytest.approx(low.rouge_l.f1, abs=1e-12)


@given(tokens, nonempty_tokens)
@settings(max_examples=300)
def test_bleu_matches_oracle(cand, ref):
    assert bleu_tokens(cand, [ref]) == pytest.approx(oracle_bleu(cand, [ref]), abs=1e-12)


@given(tokens, tokens)
@settings(max_examples=300)
def test_rouge_matches_oracle(cand, ref):
    got = rouge_tokens(cand, ref)
    for n, triple in ((1, got.rouge_1), (2, got.rouge_2)):
        assert (triple.precision, triple.recall, triple.f1) == pytest.approx(
            oracle_rouge_n(cand, ref, n), abs=1e-12
        )
    assert (got.rouge_l.precision, got.rouge_l.recall, got.rouge_l.f1) == pytest.approx(
        oracle_rouge_l(cand, ref), abs=1e-12
    )


@given(tokens, tokens)
@settings(max_examples=300)
def test_meteor_matches_oracle(cand, ref):
    assert meteor_tokens(cand, ref) == pytest.approx(
        oracle_meteor(cand, ref, stem), abs=1e-12
    )


@given(nonempty_tokens, nonempty_tokens)
def test_bert_score_one_hot_is_overlap(cand, ref):
    scores = bert_score_tokens(cand, ref, OneHotEmbedder())
    ref_set, cand_set = set(ref), set(cand)
    precision = sum(1 for t in cand if t in ref_set) / len(cand)
    recall = sum(1 for t in ref if t in cand_set) / len(ref)
    assert scores.precision == pytest.approx(precision, abs=1e-12)
    assert scores.recall == pytest.approx(recall, abs=1e-12)


@given(st.lists(st.sampled_from(["Dogs bark loudly.", "Cats nap.", "Dogs bark loudly."]), min_size=1, max_size=6))
def test_gruen_ranges(sentences):
    scores = gruen(" ".join(sentences), HeuristicAcceptabilityScorer())
    assert 0.0 <= scores.overall <= 1.0
    assert -1.0 <= scores.redundancy <= 0.0
    assert -1.0 <= scores.focus <= 0.0
    assert 0.0 <= scores.grammaticality <= 1.0


@given(
    st.lists(st.text(alphabet="abcd ", min_size=1, max_size=12), min_size=1, max_size=5),
    st.lists(st.text(alphabet="abcd ", min_size=1, max_size=12), min_size=1, max_size=5),
    st.lists(st.text(alphabet="abcd ", min_size=1, max_size=12), min_size=0, max_size=5),
)
def test_novelty_monotone(texts, reference, extension):
    small = novelty(texts, reference)
    large = novelty(texts, list(reference) + list(extension))
    assert large.new_unigrams <= small.new_unigrams
    assert large.new_bigrams <= small.new_bigrams


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30), st.randoms(use_true_random=False))
def test_aggregate_permutation_invariant(values, rng):
    shuffled = list(values)
    rng.shuffle(shuffled)
    a, b = aggregate(values), aggregate(shuffled)
    assert a.mean == pytest.approx(b.mean, abs=1e-9)
    assert a.std == pytest.approx(b.std, abs=1e-9)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20), st.floats(-3, 3), st.floats(-5, 5))
def test_aggregate_mean_linear(values, scale, shift):
    base = aggregate(values).mean
    transformed = aggregate([scale * v + shift for v in values]).mean
    assert transformed == pytest.approx(scale * base + shift, abs=1e-7)


def test_refusal_monotonicity_of_patterns():
    from counterspeech.gateway import DEFAULT_REFUSAL_PATTERNS, is_valid_response

    texts = ["I cannot help", "Sure, here is a reply", "", "As an AI I refuse"]
    extended = DEFAULT_REFUSAL_PATTERNS + ("sure,",)
    for text in texts:
        if not is_valid_response(text, DEFAULT_REFUSAL_PATTERNS):
            assert not is_valid_response(text, extended)


@given(st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=1, max_size=6))
def test_meteor_identity_formula(toks):
    got = meteor_tokens(tuple(toks), tuple(toks))
    m = len(toks)
    assert got == pytest.approx(1 - 0.5 * (1 / m) ** 3, abs=1e-12)
