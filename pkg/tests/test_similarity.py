from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from storyforge.errors import DegenerateSet, EmptyInput, ProviderError
from storyforge.similarity import (
    PairwiseDistances,
    TokenOverlapProvider,
    bleu4,
    diversity,
    nearest_reference_similarity,
    pairwise_distances,
    rouge_l,
    select_top_diverse,
    token_overlap_f1,
    tokenize,
)
from storyforge.similarity import DiversityRecord

from .oracles import oracle_diversity, oracle_token_f1

WORD = st.text(alphabet="abcdefghij", min_size=1, max_size=6)
TEXT = st.lists(WORD, min_size=1, max_size=20).map(" ".join)


def test_tokenize_lowercases_and_strips_punctuation():
    assert tokenize("The cat, sat -- 'down'.") == ("the", "cat", "sat", "down")
    assert tokenize("don't stop") == ("don't", "stop")
    assert tokenize("... --- ") == ()


def test_bleu_identical_is_exactly_one():
    score = bleu4("a b c d e", ["a b c d e"])
    assert score.value == 1.0


def test_bleu_short_identical_uses_effective_orders():
    # Two tokens: no 3- or 4-grams exist, yet a perfect copy must score 1.
    assert bleu4("so long", ["so long"]).value == 1.0


def test_bleu_disjoint_vocabulary_is_floor_smoothed():
    assert bleu4("aa bb cc dd", ["ee ff gg hh"]).value <= 1e-6


def test_bleu_hand_computed_fixture():
    # candidate "a b c d e" vs reference "a b c d f":
    # p1=4/5, p2=3/4, p3=2/3, p4=1/2, BP=1 (equal lengths)
    # BLEU = (4/5 * 3/4 * 2/3 * 1/2) ** (1/4) = 0.2 ** 0.25
    expected = (4 / 5 * 3 / 4 * 2 / 3 * 1 / 2) ** 0.25
    assert bleu4("a b c d e", ["a b c d f"]).value == pytest.approx(expected, abs=1e-6)


def test_bleu_brevity_penalty_applies_to_short_candidates():
    # candidate 2 tokens, reference 4: p1=1, p2=1, BP=exp(1-4/2)
    import math

    value = bleu4("a b", ["a b c d"]).value
    assert value == pytest.approx(math.exp(-1.0), abs=1e-9)


def test_bleu_multi_reference_clips_against_best_reference():
    one_ref = bleu4("a b c d", ["a b x y"]).value
    two_refs = bleu4("a b c d", ["a b x y", "c d a b"]).value
    assert two_refs >= one_ref


def test_bleu_empty_inputs():
    with pytest.raises(EmptyInput):
        bleu4("...", ["a b"])
    with pytest.raises(EmptyInput):
        bleu4("a b", ["..."])


def test_rouge_identical_is_one():
    assert rouge_l("a b c", ["a b c"]).value == 1.0


def test_rouge_disjoint_is_zero():
    assert rouge_l("a b c", ["x y z"]).value == 0.0


def test_rouge_hand_computed_fixture():
    # LCS("the cat sat", "the cat ran") = 2; P = R = 2/3; F1 = 2/3
    assert rouge_l("the cat sat", ["the cat ran"]).value == pytest.approx(2 / 3)


def test_rouge_takes_max_over_references():
    value = rouge_l("a b c", ["x y z", "a b q"]).value
    assert value == pytest.approx(2 / 3)


@settings(max_examples=60, deadline=None)
@given(TEXT)
def test_metric_identity_property(text):
    assert bleu4(text, [text]).value == 1.0
    assert rouge_l(text, [text]).value == 1.0


def test_nearest_reference_is_max_of_single_calls():
    candidate = "The garden kept its quiet song until the storm left."
    refs = [
        "A letter arrived before the storm.",
        "The garden kept its quiet song until the storm left.",
        "Nothing else changed that year.",
    ]
    for metric in ("bleu4", "rougeL"):
        got = nearest_reference_similarity(candidate, refs, metric).value
        singles = [
            (bleu4 if metric == "bleu4" else rouge_l)(candidate, [r]).value
            for r in refs
        ]
        assert got == max(singles)
    assert nearest_reference_similarity(candidate, refs, "bleu4").value == 1.0


def test_nearest_reference_disjoint_is_zero():
    assert (
        nearest_reference_similarity("aa bb", ["cc dd", "ee ff", "gg hh"], "rougeL").value
        == 0.0
    )


def test_token_overlap_f1_matches_loop_oracle():
    rng = random.Random(2)
    for _ in range(50):
        a = " ".join(rng.choice("abcdefg") for _ in range(rng.randrange(1, 15)))
        b = " ".join(rng.choice("abcdefg") for _ in range(rng.randrange(1, 15)))
        assert token_overlap_f1(a, b) == pytest.approx(
            oracle_token_f1(tokenize(a), tokenize(b))
        )
        assert token_overlap_f1(a, b) == token_overlap_f1(b, a)
    assert token_overlap_f1("same text", "same text") == 1.0


def test_pairwise_distance_of_identical_texts_is_zero():
    d = pairwise_distances(["same words here", "same words here"], TokenOverlapProvider())
    assert d.matrix[0, 1] == 0.0


def test_pairwise_matrix_matches_per_pair_recompute():
    provider = TokenOverlapProvider()
    texts = ["a b c d", "a b x y", "p q r s"]
    d = pairwise_distances(texts, provider, item_id="it", batch_size=2)
    for i in range(3):
        for j in range(3):
            if i == j:
                assert d.matrix[i, j] == 0.0
            else:
                expected = 1.0 - token_overlap_f1(texts[i], texts[j])
                assert d.matrix[i, j] == pytest.approx(expected)


def test_pairwise_rejects_single_text():
    with pytest.raises(DegenerateSet):
        pairwise_distances(["only one"], TokenOverlapProvider())


class OutOfRangeProvider:
    provider_id = "bad"

    def similarity_scores(self, pairs):
        return [1.2 for _ in pairs]


def test_provider_out_of_range_score_raises():
    with pytest.raises(ProviderError) as err:
        pairwise_distances(["a", "b"], OutOfRangeProvider())
    assert err.value.pair == ("a", "b")


def _distances_from_entries(entries):
    # three candidates, entries fill (0,1), (0,2), (1,2)
    m = np.zeros((3, 3))
    m[0, 1] = m[1, 0] = entries[0]
    m[0, 2] = m[2, 0] = entries[1]
    m[1, 2] = m[2, 1] = entries[2]
    return PairwiseDistances(item_id="it", labels=("a", "b", "c"), matrix=m)


def test_diversity_direct_arithmetic():
    record = diversity(_distances_from_entries([0.2, 0.3, 0.4]))
    assert record.min_distance == pytest.approx(0.2)
    assert record.mean_distance == pytest.approx(0.3)
    assert record.diversity == pytest.approx(0.06)


def test_diversity_equal_distances_squares():
    record = diversity(_distances_from_entries([0.4, 0.4, 0.4]))
    assert record.diversity == pytest.approx(0.16)


def test_diversity_matches_brute_force_on_random_matrices():
    rng = random.Random(7)
    for _ in range(25):
        entries = [rng.random() for _ in range(3)]
        record = diversity(_distances_from_entries(entries))
        lo, mean, product = oracle_diversity(entries)
        assert record.min_distance == pytest.approx(lo, abs=1e-12)
        assert record.mean_distance == pytest.approx(mean, abs=1e-12)
        assert record.diversity == pytest.approx(product, abs=1e-12)
        assert 0.0 <= record.diversity <= 1.0


def test_diversity_invariant_under_candidate_permutation():
    entries = [0.15, 0.5, 0.35]
    base = diversity(_distances_from_entries(entries))
    # permuting candidates permutes the pair entries
    permuted = diversity(_distances_from_entries([0.35, 0.5, 0.15]))
    assert base.diversity == pytest.approx(permuted.diversity)


def test_diversity_needs_two_candidates():
    m = np.zeros((1, 1))
    with pytest.raises(DegenerateSet):
        diversity(PairwiseDistances(item_id="solo", labels=("a",), matrix=m))


def _record(item_id, value):
    return DiversityRecord(
        item_id=item_id, min_distance=value, mean_distance=1.0, diversity=value
    )


def test_select_top_diverse_ordering():
    records = [_record("a", 0.06), _record("b", 0.09), _record("c", 0.01)]
    assert select_top_diverse(records, 2) == ["b", "a"]
    assert select_top_diverse(records, 0) == []
    assert select_top_diverse(records, 10) == ["b", "a", "c"]


def test_select_top_diverse_ties_break_by_id():
    records = [_record("z", 0.5), _record("a", 0.5), _record("m", 0.5)]
    assert select_top_diverse(records, 2) == ["a", "m"]


def test_select_top_diverse_matches_sort_oracle():
    rng = random.Random(13)
    records = [_record(f"r{i:03d}", rng.choice([0.1, 0.2, 0.3, rng.random()]))
               for i in range(100)]
    expected = [
        r.item_id
        for r in sorted(records, key=lambda r: (-r.diversity, r.item_id))[:50]
    ]
    got = select_top_diverse(records, 50)
    assert got == expected
    assert got == select_top_diverse(list(records), 50)  # deterministic
