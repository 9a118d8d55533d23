"""Parsing of ``<context>...</context><think>...</think><answer>...</answer>`` responses.

The parser is strict: each tag pair must occur exactly once, in order, and the
only text allowed outside the three blocks is whitespace.  Anything else is a
:class:`~ctxgrpo.errors.FormatError` and earns a format reward of 0.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DuplicateTag,
    FormatError,
    MissingTag,
    OffsetMismatch,
    OrderViolation,
    StrayContent,
    UnclosedTag,
)

SEGMENTS = ("context", "think", "answer")

_TAG_RE = re.compile(r"<(/?)(context|think|answer)>")
_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)


@dataclass(frozen=True)
class TaggedResponse:
    """One parsed completion.

    Spans are half-open character intervals of the *inner* text of each block,
    so ``raw[slice(*context_span)] == context_text``.
    """

    raw: str
    context_text: str
    think_text: str
    answer_text: str
    context_span: tuple[int, int]
    think_span: tuple[int, int]
    answer_span: tuple[int, int]

    @classmethod
    def from_texts(cls, context: str, think: str, answer: str) -> "TaggedResponse":
        raw = render_tagged(context, think, answer)
        c0 = len("<context>")
        c1 = c0 + len(context)
        t0 = c1 + len("</context><think>")
        t1 = t0 + len(think)
        a0 = t1 + len("</think><answer>")
        a1 = a0 + len(answer)
        return cls(raw, context, think, answer, (c0, c1), (t0, t1), (a0, a1))

    def render(self) -> str:
        return render_tagged(self.context_text, self.think_text, self.answer_text)

    def span(self, segment: str) -> tuple[int, int]:
        return getattr(self, f"{segment}_span")


def render_tagged(context: str, think: str, answer: str) -> str:
    return f"<context>{context}</context><think>{think}</think><answer>{answer}</answer>"


def parse_tagged_response(raw: str) -> TaggedResponse:
    """Parse ``raw`` or raise the first :class:`FormatError` found.

    Checks run per segment in order (missing, duplicate, unclosed), then block
    order, then stray text outside the blocks.
    """
    opens: dict[str, list[int]] = {name: [] for name in SEGMENTS}
    closes: dict[str, list[int]] = {name: [] for name in SEGMENTS}
    for m in _TAG_RE.finditer(raw):
        (closes if m.group(1) else opens)[m.group(2)].append(m.start())

    blocks: dict[str, tuple[int, int, int, int]] = {}
    for name in SEGMENTS:
        o, c = opens[name], closes[name]
        if not o and not c:
            raise MissingTag(name)
        if len(o) > 1 or len(c) > 1:
            raise DuplicateTag(name)
        if len(o) != 1 or len(c) != 1 or c[0] < o[0] + len(name) + 2:
            raise UnclosedTag(name)
        inner_start = o[0] + len(name) + 2
        inner_end = c[0]
        blocks[name] = (o[0], inner_start, inner_end, inner_end + len(name) + 3)

    ordered = [blocks[name] for name in SEGMENTS]
    for prev, nxt in zip(ordered, ordered[1:]):
        if prev[3] > nxt[0]:
            raise OrderViolation()

    cursor = 0
    for block_start, _, _, block_end in ordered:
        _check_gap(raw, cursor, block_start)
        cursor = block_end
    _check_gap(raw, cursor, len(raw))

    spans = {name: (blocks[name][1], blocks[name][2]) for name in SEGMENTS}
    return TaggedResponse(
        raw=raw,
        context_text=raw[slice(*spans["context"])],
        think_text=raw[slice(*spans["think"])],
        answer_text=raw[slice(*spans["answer"])],
        context_span=spans["context"],
        think_span=spans["think"],
        answer_span=spans["answer"],
    )


def _check_gap(raw: str, start: int, end: int) -> None:
    for i in range(start, end):
        if not raw[i].isspace():
            raise StrayContent(i)


def try_parse(raw: str) -> TaggedResponse | None:
    try:
        return parse_tagged_response(raw)
    except FormatError:
        return None


def format_reward(raw: str) -> int:
    return 0 if try_parse(raw) is None else 1


def find_answer_segment(raw: str) -> str | None:
    """Inner text of the first ``<answer>...</answer>`` pair, ignoring the rest of the layout.

    Used where an answer has to be scored even though the full format is
    broken (difficulty filtering, baseline evaluation).
    """
    resp = try_parse(raw)
    if resp is not None:
        return resp.answer_text
    m = _ANSWER_RE.search(raw)
    return m.group(1) if m else None


@dataclass(frozen=True)
class SegmentMask:
    num_tokens: int
    context_tokens: frozenset[int]
    think_tokens: frozenset[int]
    answer_tokens: frozenset[int]

    @classmethod
    def empty(cls, num_tokens: int) -> "SegmentMask":
        return cls(num_tokens, frozenset(), frozenset(), frozenset())

    def indicator(self, segment: str):
        """Boolean vector over token positions."""
        out = np.zeros(self.num_tokens, dtype=bool)
        idx = getattr(self, f"{segment}_tokens")
        if idx:
            out[sorted(idx)] = True
        return out


def segment_token_spans(
    resp: TaggedResponse, token_char_offsets: Sequence[tuple[int, int]]
) -> SegmentMask:
    """Assign each token to the segment containing its first character.

    Tokens starting on a tag delimiter or inter-block whitespace, and
    zero-width tokens, belong to no segment.
    """
    cursor = 0
    for start, end in token_char_offsets:
        if start != cursor or end < start:
            raise OffsetMismatch(
                f"token interval [{start}, {end}) does not continue from char {cursor}"
            )
        cursor = end
    if cursor != len(resp.raw):
        raise OffsetMismatch(f"offsets cover {cursor} chars, response has {len(resp.raw)}")

    assigned: dict[str, set[int]] = {name: set() for name in SEGMENTS}
    for idx, (start, end) in enumerate(token_char_offsets):
        if start == end:
            continue
        for name in SEGMENTS:
            lo, hi = resp.span(name)
            if lo <= start < hi:
                assigned[name].add(idx)
                break
    return SegmentMask(
        num_tokens=len(token_char_offsets),
        context_tokens=frozenset(assigned["context"]),
        think_tokens=frozenset(assigned["think"]),
        answer_tokens=frozenset(assigned["answer"]),
    )
