import itertools
from functools import lru_cache

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxgrpo.errors import EmptyReference, JudgeError
from ctxgrpo.judge import JudgeInterface, JudgeScore, MockJudge
from ctxgrpo.rewards import (
    DEFAULT_MAPPING,
    SCALED,
    GoldSpec,
    RewardVector,
    ScoreMapping,
    accuracy_reward,
    compute_reward_vector,
    context_reward,
    extract_option_letters,
    judge_score_to_reward,
    logical_reward,
    mc_single_reward,
    multi_answer_f1,
    numeric_reward,
    parse_last_number,
    transcript_reward,
    wer,
)


class FixedJudge(JudgeInterface):
    def __init__(self, score):
        self.score = score

    def evaluate(self, rubric, reference, hypothesis):
        return JudgeScore(self.score, rubric)


# --- oracles -------------------------------------------------------------------


def recursive_edit_distance(a, b):
    """Plain recursion over the three edit operations, memoised on suffix positions."""

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        if a[i] == b[j]:
            return go(i + 1, j + 1)
        return 1 + min(go(i + 1, j + 1), go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def set_f1(pred, gold):
    tp = len(pred & gold)
    p = tp / len(pred) if pred else 0.0
    r = tp / len(gold)
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


# --- GoldSpec ------------------------------------------------------------------


def test_goldspec_validation():
    with pytest.raises(ValueError):
        GoldSpec("mc_multi", gold_set=frozenset())
    with pytest.raises(ValueError):
        GoldSpec("numeric", gold_number=1.0, numeric_tolerance=-1)
    with pytest.raises(ValueError):
        GoldSpec("mc_single", gold_choice="A", gold_number=2.0)
    assert GoldSpec.mc_single("b").gold_choice == "B"


@pytest.mark.parametrize(
    "gold",
    [
        GoldSpec.mc_single("C"),
        GoldSpec.mc_multi({"A", "D"}),
        GoldSpec.numeric(2.5, 0.1),
        GoldSpec.transcript("hello world"),
        GoldSpec.open_ended("a cat on a mat"),
    ],
)
def test_goldspec_json_roundtrip(gold):
    assert GoldSpec.from_json(gold.to_json()) == gold


# --- mc / f1 -------------------------------------------------------------------


@pytest.mark.parametrize(
    "text,expected",
    [("The answer is B.", 1), ("B", 1), ("(C) because...", 0), ("", 0), ("b", 1), ("Bob", 0)],
)
def test_mc_single(text, expected):
    assert mc_single_reward(text, GoldSpec.mc_single("B")) == expected


def test_extract_letters():
    assert extract_option_letters("A, c and (D)") == ["A", "C", "D"]


def test_f1_examples():
    assert multi_answer_f1({"A", "C"}, {"A", "C"}) == 1.0
    assert multi_answer_f1({"A", "B"}, {"A", "C"}) == 0.5
    assert multi_answer_f1(set(), {"A"}) == 0.0


def test_f1_all_subsets_oracle():
    universe = "ABCDE"
    subsets = [frozenset(c) for k in range(6) for c in itertools.combinations(universe, k)]
    for pred in subsets:
        for gold in subsets:
            if not gold:
                continue
            got = multi_answer_f1(pred, gold)
            assert got == set_f1(set(pred), set(gold))
            assert (got == 1.0) == (pred == gold)
            if len(pred) == len(gold) and pred:
                assert got == multi_answer_f1(gold, pred)


# --- WER -----------------------------------------------------------------------


def test_wer_examples():
    assert wer(["the", "cat", "sat"], ["the", "cat", "sat"]) == 0.0
    assert wer(list("abcd"), ["a", "x", "c"]) == 0.5
    assert wer(["a"], ["x", "y", "z"]) == 3.0
    with pytest.raises(EmptyReference):
        wer([], ["a"])


words = st.lists(st.sampled_from(["w0", "w1", "w2", "w3", "w4"]), max_size=8)


@settings(max_examples=1000, deadline=None)
@given(words.filter(bool), words)
def test_wer_matches_recursive_oracle(ref, hyp):
    assert wer(ref, hyp) == recursive_edit_distance(tuple(ref), tuple(hyp)) / len(ref)


def test_transcript_reward():
    gold = GoldSpec.transcript("A B C D")
    assert transcript_reward("a b c d", gold) == 1.0
    assert transcript_reward("a x c", gold) == 0.5
    assert transcript_reward("x y z", GoldSpec.transcript("a")) == 0.0
    with pytest.raises(EmptyReference):
        transcript_reward("x", GoldSpec("transcript", gold_text="   "))


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=30), st.text(min_size=1, max_size=30).filter(lambda s: s.split()))
def test_transcript_reward_in_unit_interval(hyp, ref):
    assert 0.0 <= transcript_reward(hyp, GoldSpec.transcript(ref)) <= 1.0


# --- numeric -------------------------------------------------------------------


def test_numeric_examples():
    assert numeric_reward("3.50", GoldSpec.numeric(3.5, 1e-6)) == 1
    assert numeric_reward("answer: -2", GoldSpec.numeric(2, 0)) == 0
    assert numeric_reward("x = 1.0e3", GoldSpec.numeric(1000, 1e-9)) == 1
    assert numeric_reward("no digits", GoldSpec.numeric(0)) == 0
    assert numeric_reward("first 5 then 7", GoldSpec.numeric(7)) == 1
    assert parse_last_number(".5") == 0.5


# --- judge mapping -------------------------------------------------------------


def test_score_mapping_examples():
    assert judge_score_to_reward(JudgeScore(5, "context_coverage"), SCALED) == 1.0
    assert judge_score_to_reward(JudgeScore(0, "context_coverage"), ScoreMapping("threshold", 4)) == 0
    assert judge_score_to_reward(JudgeScore(4, "context_coverage"), ScoreMapping("threshold", 4)) == 1
    assert judge_score_to_reward(JudgeScore(3, "logical_quality"), SCALED) == pytest.approx(0.6)


@pytest.mark.parametrize("mapping", [SCALED] + [ScoreMapping("threshold", t) for t in range(6)])
def test_mapping_monotone(mapping):
    values = [judge_score_to_reward(JudgeScore(s, "open_similarity"), mapping) for s in range(6)]
    assert values == sorted(values)
    assert all(0.0 <= v <= 1.0 for v in values)


def test_context_reward_examples():
    judge = MockJudge()
    ref = "red box holds B"
    assert context_reward(judge, ref, ref, SCALED) == 1.0
    assert context_reward(judge, "", ref, SCALED) == 0.0
    assert context_reward(FixedJudge(2), "x", ref, ScoreMapping("threshold", 4)) == 0.0


def test_logical_reward_examples():
    judge = MockJudge()
    ctx = "red box holds B"
    assert logical_reward(judge, ctx, "because red therefore B verify", SCALED) == 1.0
    assert logical_reward(judge, ctx, "", SCALED) == 0.0
    assert logical_reward(FixedJudge(3), ctx, "x", SCALED) == pytest.approx(0.6)


def test_accuracy_dispatch():
    assert accuracy_reward("The answer is B.", GoldSpec.mc_single("B")) == 1.0
    assert accuracy_reward("A, B", GoldSpec.mc_multi({"A", "C"})) == 0.5
    assert accuracy_reward("anything", GoldSpec.open_ended("x"), FixedJudge(5)) == 1.0
    with pytest.raises(JudgeError):
        accuracy_reward("x", GoldSpec.open_ended("x"))


# --- reward vector -------------------------------------------------------------

GOOD = "<context>red box holds B </context><think>because B therefore verify </think><answer>B </answer>"


def test_reward_vector_all_streams():
    rv = compute_reward_vector(
        GOOD, GoldSpec.mc_single("B"), ("format", "accuracy", "context", "logical"), MockJudge(), "red box holds B"
    )
    assert rv == RewardVector(1.0, 1.0, 1.0, 1.0)
    assert rv.streams_enabled == ("format", "accuracy", "context", "logical")


def test_reward_vector_disabled_streams_absent():
    rv = compute_reward_vector(GOOD, GoldSpec.mc_single("B"), ("format", "accuracy"))
    assert rv.r_c is None and rv.r_l is None
    assert rv.streams_enabled == ("format", "accuracy")


def test_malformed_response_skips_judge():
    class Boom(JudgeInterface):
        def evaluate(self, *a):
            raise AssertionError("judge must not be called")

    rv = compute_reward_vector("junk <answer>B</answer>", GoldSpec.mc_single("B"), ("format", "accuracy", "context", "logical"), Boom(), "ctx")
    assert rv == RewardVector(0.0, 1.0, 0.0, 0.0)


def test_default_mapping_is_threshold_four():
    assert DEFAULT_MAPPING == ScoreMapping("threshold", 4)
    # 3 is a legal judge score even though one rubric has no level for it
    assert judge_score_to_reward(JudgeScore(3, "context_coverage")) == 0.0
