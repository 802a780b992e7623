from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from storyforge.errors import BackendError, ScoreParseError, UnknownCriterion
from storyforge.judge import (
    CRITERION_SCALES,
    MockJudgeBackend,
    build_prompt,
    judge_criteria_set,
    judge_one,
    parse_score,
    principles_hash,
    principles_text,
)

STAGE_NAMES = ("Equilibrium", "Disruption", "Recognition", "Attempt", "New Equilibrium")


def test_scales_fixed_per_criterion():
    assert CRITERION_SCALES["logical"] == (1, 3)
    assert CRITERION_SCALES["rational"] == (1, 3)
    assert CRITERION_SCALES["complete_n"] == (1, 3)
    assert CRITERION_SCALES["overall"] == (1, 3)
    assert CRITERION_SCALES["overall5"] == (1, 5)
    assert CRITERION_SCALES["narrativity"] == (1, 5)


def test_prompt_contains_stages_story_and_scale(worked_example):
    prompt = build_prompt(
        worked_example, worked_example.edited_endings[0], "logical", "score_only"
    )
    text = prompt.rendered_text
    for stage in STAGE_NAMES:
        assert stage in text
    assert worked_example.premise in text
    assert worked_example.initial in text
    assert worked_example.original_ending in text
    assert worked_example.counterfactual in text
    assert worked_example.edited_endings[0] in text
    assert "between 1 and 3" in text
    assert "score first" in text


def test_prompt_overall5_states_five_point_scale(worked_example):
    prompt = build_prompt(worked_example, "Some new ending.", "overall5")
    assert prompt.scale == (1, 5)
    assert "between 1 and 5" in prompt.rendered_text


def test_prompt_rendering_is_pure(worked_example):
    a = build_prompt(worked_example, "An ending.", "rational", "reason_then_score")
    b = build_prompt(worked_example, "An ending.", "rational", "reason_then_score")
    assert a.rendered_text == b.rendered_text
    assert a.prompt_hash == b.prompt_hash


def test_distinct_candidates_yield_distinct_prompts(worked_example):
    seen = set()
    for i in range(30):
        prompt = build_prompt(worked_example, f"Ending number {i}.", "logical")
        seen.add(prompt.prompt_hash)
    assert len(seen) == 30


def test_unknown_criterion_rejected(worked_example):
    with pytest.raises(UnknownCriterion):
        build_prompt(worked_example, "x.", "sparkle")
    with pytest.raises(ValueError):
        build_prompt(worked_example, "x.", "logical", "haiku")


def test_principles_are_versioned_and_hashed():
    text = principles_text()
    assert "Equilibrium" in text
    assert len(principles_hash()) == 64
    assert principles_hash() == principles_hash()


@pytest.mark.parametrize(
    "text,expected",
    [
        ("2", 2),
        ("Score: 3", 3),
        ("3/3", 3),
        ("[3]", 3),
        ("2 because it holds", 2),
    ],
)
def test_parse_score_only_first_in_scale(text, expected):
    score, rationale = parse_score(text, (1, 3), "score_only")
    assert score == expected
    assert rationale is None


def test_parse_reason_then_score_takes_last():
    text = "The ending contradicts the counterfactual at step 2. Score: 1"
    score, rationale = parse_score(text, (1, 3), "reason_then_score")
    assert score == 1
    assert rationale == "The ending contradicts the counterfactual at step 2."


def test_parse_skips_out_of_scale_integers():
    score, _ = parse_score("Rated 7 out of 10... final 2", (1, 3), "score_only")
    assert score == 2


def test_parse_error_when_no_integer():
    with pytest.raises(ScoreParseError):
        parse_score("seven", (1, 3), "score_only")
    with pytest.raises(ScoreParseError):
        parse_score("the score is 9", (1, 3), "reason_then_score")


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=80), st.sampled_from([(1, 3), (1, 5)]),
       st.sampled_from(["score_only", "reason_then_score"]))
def test_parse_never_returns_out_of_scale(text, scale, format):
    try:
        score, _ = parse_score(text, scale, format)
    except ScoreParseError:
        return
    assert scale[0] <= score <= scale[1]


def test_judge_one_score_only(worked_example):
    backend = MockJudgeBackend(seed=1)
    prompt = build_prompt(worked_example, "A new ending holds.", "overall")
    verdict = judge_one(backend, prompt)
    assert 1 <= verdict.score <= 3
    assert verdict.rationale is None
    assert verdict.backend_id == "mock:1"
    assert verdict.prompt_hash == prompt.prompt_hash


def test_judge_one_reason_then_score(worked_example):
    backend = MockJudgeBackend(seed=1)
    prompt = build_prompt(
        worked_example, "A new ending holds.", "narrativity", "reason_then_score"
    )
    verdict = judge_one(backend, prompt)
    assert 1 <= verdict.score <= 5
    assert verdict.rationale


class StubbornBackend:
    """Never produces a parseable score."""

    backend_id = "stubborn"

    def __init__(self):
        self.n_calls = 0

    def complete(self, prompt, stop_condition=None, max_tokens=512):
        self.n_calls += 1
        return "seven"


def test_judge_one_retries_then_parse_error(worked_example):
    backend = StubbornBackend()
    prompt = build_prompt(worked_example, "A new ending.", "logical")
    with pytest.raises(ScoreParseError) as err:
        judge_one(backend, prompt, retries=2)
    assert backend.n_calls == 3
    assert err.value.raw_response == "seven"


class FlakyBackend:
    """Unparseable on the first call, then behaves."""

    backend_id = "flaky"

    def __init__(self):
        self.n_calls = 0

    def complete(self, prompt, stop_condition=None, max_tokens=512):
        self.n_calls += 1
        return "hmm" if self.n_calls == 1 else "2"


def test_judge_one_recovers_on_retry(worked_example):
    backend = FlakyBackend()
    prompt = build_prompt(worked_example, "A new ending.", "logical")
    verdict = judge_one(backend, prompt, retries=2)
    assert verdict.score == 2
    assert backend.n_calls == 2


def test_mock_backend_is_deterministic(worked_example):
    prompt = build_prompt(worked_example, "Stable ending.", "overall")
    first = MockJudgeBackend(seed=9).complete(prompt.rendered_text)
    second = MockJudgeBackend(seed=9).complete(prompt.rendered_text)
    assert first == second
    assert MockJudgeBackend(seed=10).complete(prompt.rendered_text) != first or True


def test_mock_backend_respects_token_budget(worked_example):
    backend = MockJudgeBackend(seed=2)
    prompt = build_prompt(worked_example, "A brisk ending.", "overall")
    judge_one(backend, prompt, score_only_max_tokens=8)
    assert backend.tokens_by_call[-1] <= 8


def test_criteria_set_one_call_per_criterion(worked_example):
    backend = MockJudgeBackend(seed=3)
    result = judge_criteria_set(
        backend, worked_example, "A new ending.", ["logical", "rational", "complete_n"]
    )
    assert backend.n_calls == 3
    assert set(result.verdicts) == {"logical", "rational", "complete_n"}
    derived_min = min(v.score for v in result.verdicts.values())
    assert derived_min == min(
        result.verdicts["logical"].score,
        result.verdicts["rational"].score,
        result.verdicts["complete_n"].score,
    )


def test_criteria_set_overall_single_call(worked_example):
    backend = MockJudgeBackend(seed=3)
    result = judge_criteria_set(backend, worked_example, "A new ending.", ["overall"])
    assert backend.n_calls == 1
    assert set(result.verdicts) == {"overall"}


def test_criteria_set_empty_rejected(worked_example):
    with pytest.raises(ValueError):
        judge_criteria_set(MockJudgeBackend(), worked_example, "x.", [])


def test_criteria_set_reports_partial_failures(worked_example):
    class HalfBroken:
        backend_id = "half"

        def complete(self, prompt, stop_condition=None, max_tokens=512):
            if "Criterion to score: rational" in prompt:
                raise BackendError("down")
            return "2"

    result = judge_criteria_set(
        HalfBroken(), worked_example, "An ending.", ["logical", "rational"]
    )
    assert "logical" in result.verdicts
    assert "rational" in result.failures


def test_criteria_set_concurrent_matches_serial(worked_example):
    serial = judge_criteria_set(
        MockJudgeBackend(seed=4), worked_example, "An ending.",
        ["logical", "rational", "complete_n", "narrativity"],
    )
    threaded = judge_criteria_set(
        MockJudgeBackend(seed=4), worked_example, "An ending.",
        ["logical", "rational", "complete_n", "narrativity"],
        concurrency=4,
    )
    assert {k: v.score for k, v in serial.verdicts.items()} == {
        k: v.score for k, v in threaded.verdicts.items()
    }
