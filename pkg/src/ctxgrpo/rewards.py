"""Reward streams: format, verifiable accuracy, and judge-based context/logic.

All rewards lie in [0, 1].  Rule-based rewards never raise on bad model
output (unparseable answers score 0); judge-backed rewards propagate
:class:`~ctxgrpo.errors.JudgeError` so that a judge outage stops training
instead of silently feeding zeros.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Collection, Sequence

from .errors import EmptyReference, JudgeError
from .judge import JudgeInterface, JudgeScore
from .response_format import find_answer_segment, try_parse

STREAMS = ("format", "accuracy", "context", "logical")
ANSWER_TYPES = ("mc_single", "mc_multi", "numeric", "transcript", "open_ended")

_LETTER_RE = re.compile(r"(?<![A-Za-z])[A-Za-z](?![A-Za-z])")
_NUMBER_RE = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")

_TYPE_FIELDS = {
    "mc_single": "gold_choice",
    "mc_multi": "gold_set",
    "numeric": "gold_number",
    "transcript": "gold_text",
    "open_ended": "gold_text",
}


@dataclass(frozen=True)
class GoldSpec:
    answer_type: str
    gold_choice: str | None = None
    gold_set: frozenset[str] | None = None
    gold_number: float | None = None
    gold_text: str | None = None
    numeric_tolerance: float | None = None

    def __post_init__(self):
        if self.answer_type not in ANSWER_TYPES:
            raise ValueError(f"unknown answer_type {self.answer_type!r}")
        wanted = _TYPE_FIELDS[self.answer_type]
        for field in ("gold_choice", "gold_set", "gold_number", "gold_text"):
            present = getattr(self, field) is not None
            if present != (field == wanted):
                state = "missing" if field == wanted else "not allowed"
                raise ValueError(f"{field} {state} for answer_type {self.answer_type}")
        if self.answer_type == "numeric":
            if self.numeric_tolerance is None:
                object.__setattr__(self, "numeric_tolerance", 0.0)
            elif self.numeric_tolerance < 0:
                raise ValueError("numeric_tolerance must be >= 0")
            object.__setattr__(self, "gold_number", float(self.gold_number))
        elif self.numeric_tolerance is not None:
            raise ValueError("numeric_tolerance only applies to numeric answers")
        if self.answer_type == "mc_single":
            if not _is_letter(self.gold_choice):
                raise ValueError(f"gold_choice must be one letter, got {self.gold_choice!r}")
            object.__setattr__(self, "gold_choice", self.gold_choice.upper())
        if self.answer_type == "mc_multi":
            letters = frozenset(x.upper() for x in self.gold_set)
            if not letters or not all(_is_letter(x) for x in letters):
                raise ValueError("gold_set must be a non-empty set of letters")
            object.__setattr__(self, "gold_set", letters)

    @classmethod
    def mc_single(cls, letter: str) -> "GoldSpec":
        return cls("mc_single", gold_choice=letter)

    @classmethod
    def mc_multi(cls, letters) -> "GoldSpec":
        return cls("mc_multi", gold_set=frozenset(letters))

    @classmethod
    def numeric(cls, value: float, tolerance: float = 0.0) -> "GoldSpec":
        return cls("numeric", gold_number=value, numeric_tolerance=tolerance)

    @classmethod
    def transcript(cls, text: str) -> "GoldSpec":
        return cls("transcript", gold_text=text)

    @classmethod
    def open_ended(cls, text: str) -> "GoldSpec":
        return cls("open_ended", gold_text=text)

    def to_json(self) -> dict:
        out: dict = {"answer_type": self.answer_type}
        field = _TYPE_FIELDS[self.answer_type]
        value = getattr(self, field)
        out[field] = sorted(value) if field == "gold_set" else value
        if self.answer_type == "numeric":
            out["numeric_tolerance"] = self.numeric_tolerance
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "GoldSpec":
        unknown = set(obj) - {"answer_type", *_TYPE_FIELDS.values(), "numeric_tolerance"}
        if unknown:
            raise ValueError(f"unknown gold fields: {sorted(unknown)}")
        kwargs = dict(obj)
        if kwargs.get("gold_set") is not None:
            kwargs["gold_set"] = frozenset(kwargs["gold_set"])
        return cls(**kwargs)


def _is_letter(x) -> bool:
    return isinstance(x, str) and len(x) == 1 and x.isascii() and x.isalpha()


@dataclass(frozen=True)
class RewardVector:
    """Per-completion reward streams; ``None`` marks a disabled stream."""

    r_f: float | None = None
    r_a: float | None = None
    r_c: float | None = None
    r_l: float | None = None

    def get(self, stream: str) -> float | None:
        return getattr(self, _STREAM_ATTR[stream])

    @property
    def streams_enabled(self) -> tuple[str, ...]:
        return tuple(s for s in STREAMS if self.get(s) is not None)


_STREAM_ATTR = {"format": "r_f", "accuracy": "r_a", "context": "r_c", "logical": "r_l"}


# --- rule-based accuracy -------------------------------------------------------

def extract_option_letters(text: str) -> list[str]:
    """Standalone letters (not part of a longer word), upper-cased, in order."""
    return [m.group(0).upper() for m in _LETTER_RE.finditer(text)]


def mc_single_reward(answer_text: str, gold: GoldSpec) -> int:
    letters = extract_option_letters(answer_text)
    return int(bool(letters) and letters[0] == gold.gold_choice)


def multi_answer_f1(pred_set: Collection[str], gold_set: Collection[str]) -> float:
    pred, gold = set(pred_set), set(gold_set)
    if not gold:
        raise ValueError("gold_set must be non-empty")
    hit = len(pred & gold)
    if hit == 0:
        return 0.0
    precision = hit / len(pred)
    recall = hit / len(gold)
    return 2 * precision * recall / (precision + recall)


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    """Unit-cost Levenshtein distance between two token sequences."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(
                prev[j - 1] + (r != h),  # substitution / match
                prev[j] + 1,  # deletion
                cur[j - 1] + 1,  # insertion
            )
        prev = cur
    return prev[-1]


def wer(ref_words: Sequence[str], hyp_words: Sequence[str]) -> float:
    if len(ref_words) == 0:
        raise EmptyReference("reference transcript has no words")
    return edit_distance(ref_words, hyp_words) / len(ref_words)


def transcript_reward(answer_text: str, gold: GoldSpec) -> float:
    ref = gold.gold_text.lower().split()
    hyp = answer_text.lower().split()
    return max(0.0, 1.0 - wer(ref, hyp))


def parse_last_number(text: str) -> float | None:
    found = _NUMBER_RE.findall(text)
    if not found:
        return None
    try:
        return float(found[-1])
    except ValueError:
        return None


def numeric_reward(answer_text: str, gold: GoldSpec) -> int:
    value = parse_last_number(answer_text)
    if value is None:
        return 0
    return int(abs(value - gold.gold_number) <= gold.numeric_tolerance)


# --- judge-based ---------------------------------------------------------------

@dataclass(frozen=True)
class ScoreMapping:
    """How a 0-5 judge score becomes a reward: ``scaled`` (score/5) or ``threshold`` (score >= tau)."""

    mode: str = "threshold"
    tau: int = 4

    def __post_init__(self):
        if self.mode not in ("scaled", "threshold"):
            raise ValueError(f"unknown mapping mode {self.mode!r}")
        if self.mode == "threshold" and not 0 <= self.tau <= 5:
            raise ValueError("tau must lie in [0, 5]")


SCALED = ScoreMapping("scaled")
DEFAULT_MAPPING = ScoreMapping("threshold", 4)


def judge_score_to_reward(score: JudgeScore, mapping: ScoreMapping = DEFAULT_MAPPING) -> float:
    if mapping.mode == "scaled":
        return score.raw_score / 5
    return float(score.raw_score >= mapping.tau)


def context_reward(
    judge: JudgeInterface,
    generated_context: str,
    reference_context: str,
    mapping: ScoreMapping = DEFAULT_MAPPING,
) -> float:
    score = judge.evaluate("context_coverage", reference_context, generated_context)
    return judge_score_to_reward(score, mapping)


def logical_reward(
    judge: JudgeInterface,
    context_text: str,
    think_text: str,
    mapping: ScoreMapping = DEFAULT_MAPPING,
) -> float:
    score = judge.evaluate("logical_quality", context_text, think_text)
    return judge_score_to_reward(score, mapping)


def accuracy_reward(
    answer_text: str,
    gold: GoldSpec,
    judge: JudgeInterface | None = None,
    mapping: ScoreMapping = SCALED,
) -> float:
    kind = gold.answer_type
    if kind == "mc_single":
        return float(mc_single_reward(answer_text, gold))
    if kind == "mc_multi":
        return multi_answer_f1(extract_option_letters(answer_text), gold.gold_set)
    if kind == "numeric":
        return float(numeric_reward(answer_text, gold))
    if kind == "transcript":
        return transcript_reward(answer_text, gold)
    if judge is None:
        raise JudgeError("open-ended answers need a judge")
    score = judge.evaluate("open_similarity", gold.gold_text, answer_text)
    return judge_score_to_reward(score, mapping)


def measured_accuracy(raw: str, gold: GoldSpec, judge: JudgeInterface | None = None) -> float:
    """Accuracy of a raw completion, scoring the answer segment even if the layout is broken."""
    answer = find_answer_segment(raw)
    if answer is None:
        return 0.0
    return accuracy_reward(answer, gold, judge)


def compute_reward_vector(
    raw: str,
    gold: GoldSpec,
    streams: Collection[str],
    judge: JudgeInterface | None = None,
    reference_context: str | None = None,
    mapping: ScoreMapping = DEFAULT_MAPPING,
) -> RewardVector:
    """All enabled streams for one completion.

    Judge streams are only queried for well-formed responses; a malformed
    response has no context or reasoning segment and scores 0 there.
    """
    unknown = set(streams) - set(STREAMS)
    if unknown:
        raise ValueError(f"unknown reward streams {sorted(unknown)}")
    resp = try_parse(raw)
    values: dict[str, float] = {}
    if "format" in streams:
        values["r_f"] = float(resp is not None)
    if "accuracy" in streams:
        values["r_a"] = measured_accuracy(raw, gold, judge)
    if "context" in streams:
        if reference_context is None:
            raise ValueError("context reward needs a reference context")
        values["r_c"] = 0.0 if resp is None else context_reward(
            _require(judge), resp.context_text, reference_context, mapping
        )
    if "logical" in streams:
        values["r_l"] = 0.0 if resp is None else logical_reward(
            _require(judge), resp.context_text, resp.think_text, mapping
        )
    return RewardVector(**values)


def _require(judge: JudgeInterface | None) -> JudgeInterface:
    if judge is None:
        raise JudgeError("context and logical rewards need a judge")
    return judge
