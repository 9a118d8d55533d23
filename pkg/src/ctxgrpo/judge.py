"""LLM-as-judge scoring backends.

Every backend answers ``evaluate(rubric, reference, hypothesis)`` with an
integer score in [0, 5].  :class:`MockJudge` is a deterministic lexical
heuristic used for tests and desk-scale training; :class:`RemoteJudge` talks
JSON over HTTP to a real judge service.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .errors import JudgeUnavailable, MalformedJudgeReply

logger = logging.getLogger(__name__)

RUBRICS = ("context_coverage", "logical_quality", "open_similarity")
PROMPT_VERSION = "v1"
CREDENTIAL_ENV = "CTXGRPO_JUDGE_API_KEY"


@dataclass(frozen=True)
class JudgeScore:
    raw_score: int
    rubric: str

    def __post_init__(self):
        if self.rubric not in RUBRICS:
            raise ValueError(f"unknown rubric {self.rubric!r}")
        if isinstance(self.raw_score, bool) or not isinstance(self.raw_score, int):
            raise MalformedJudgeReply(f"score must be an integer, got {self.raw_score!r}")
        if not 0 <= self.raw_score <= 5:
            raise MalformedJudgeReply(f"score {self.raw_score} outside [0, 5]")


@lru_cache(maxsize=None)
def load_prompt(name: str, version: str = PROMPT_VERSION) -> str:
    """Prompt template text (``system`` or one of :data:`RUBRICS`)."""
    path = resources.files("ctxgrpo") / "prompts" / f"{name}.{version}.txt"
    return path.read_text(encoding="utf-8")


def render_prompt(rubric: str, reference: str, hypothesis: str, version: str = PROMPT_VERSION) -> str:
    if rubric not in RUBRICS:
        raise ValueError(f"unknown rubric {rubric!r}")
    template = load_prompt(rubric, version)
    # plain replace: texts may contain braces
    return template.replace("{reference}", reference).replace("{hypothesis}", hypothesis)


class JudgeInterface(ABC):
    @abstractmethod
    def evaluate(self, rubric: str, reference: str, hypothesis: str) -> JudgeScore:
        ...


# --- deterministic mock ------------------------------------------------------

_WORD_RE = re.compile(r"[a-z0-9]+")

STOPWORDS = frozenset(
    "the an is are was were of to and or in on at it this that with for by as be".split()
)
REFLECTION_WORDS = frozenset(
    "verify verified check recheck confirm confirmed review revisit reconsider double".split()
)
CONNECTIVE_WORDS = frozenset("because therefore so thus hence since implies".split())


def _words(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def _content(text: str) -> set[str]:
    return {w for w in _words(text) if w not in STOPWORDS}


class MockJudge(JudgeInterface):
    """Lexical stand-in for an LLM judge.

    * ``context_coverage``: ``floor(5 * recall)`` of the reference's content
      words found in the hypothesis.
    * ``open_similarity``: ``floor(5 * F1)`` of the two content-word sets.
    * ``logical_quality``: one point per criterion, with the reference as the
      context and the hypothesis as the reasoning path:
      clue integration (shares a content word with the context), reflection
      (a verification word), logic (a connective), analysis (at least
      ``min_analysis_words`` distinct words) and consistency (every content word is
      from the context or the reasoning lexicon).
    """

    def __init__(self, min_analysis_words: int = 4):
        self.min_analysis_words = min_analysis_words

    def evaluate(self, rubric: str, reference: str, hypothesis: str) -> JudgeScore:
        if rubric == "context_coverage":
            score = self._coverage(reference, hypothesis)
        elif rubric == "open_similarity":
            score = self._similarity(reference, hypothesis)
        elif rubric == "logical_quality":
            score = self._logic(reference, hypothesis)
        else:
            raise ValueError(f"unknown rubric {rubric!r}")
        return JudgeScore(score, rubric)

    @staticmethod
    def _coverage(reference: str, hypothesis: str) -> int:
        ref = _content(reference)
        if not ref:
            return 0
        hit = len(ref & _content(hypothesis))
        return (5 * hit) // len(ref)

    @staticmethod
    def _similarity(reference: str, hypothesis: str) -> int:
        ref, hyp = _content(reference), _content(hypothesis)
        common = len(ref & hyp)
        if common == 0:
            return 0
        # floor(5 * 2c / (|ref| + |hyp|)) in integer arithmetic
        return (10 * common) // (len(ref) + len(hyp))

    def _logic(self, context: str, reasoning: str) -> int:
        words = _words(reasoning)
        if not words:
            return 0
        content = {w for w in words if w not in STOPWORDS}
        ctx = _content(context)
        lexicon = ctx | REFLECTION_WORDS | CONNECTIVE_WORDS
        criteria = (
            bool(content & ctx),
            bool(content & REFLECTION_WORDS),
            bool(content & CONNECTIVE_WORDS),
            len(set(words)) >= self.min_analysis_words,
            bool(content) and content <= lexicon,
        )
        return sum(criteria)


class CountingJudge(JudgeInterface):
    """Wraps another judge and counts calls per rubric."""

    def __init__(self, inner: JudgeInterface | None = None):
        self.inner = inner if inner is not None else MockJudge()
        self.calls: dict[str, int] = {r: 0 for r in RUBRICS}
        self._lock = threading.Lock()

    @property
    def total_calls(self) -> int:
        return sum(self.calls.values())

    def evaluate(self, rubric: str, reference: str, hypothesis: str) -> JudgeScore:
        with self._lock:
            self.calls[rubric] += 1
        return self.inner.evaluate(rubric, reference, hypothesis)


# --- HTTP client -------------------------------------------------------------

class RemoteJudge(JudgeInterface):
    """JSON-over-HTTP judge client.

    Request: ``POST endpoint`` with ``{"rubric", "reference", "hypothesis"}``.
    Reply: ``{"score": <int 0-5>}``.  Failed attempts are retried ``retries``
    times with exponential backoff; at most ``concurrency`` requests are in
    flight across threads sharing the instance.
    """

    def __init__(
        self,
        endpoint: str,
        timeout: float = 30.0,
        retries: int = 3,
        concurrency: int = 4,
        backoff: float = 0.5,
        api_key: str | None = None,
    ):
        if retries < 0 or concurrency < 1 or timeout <= 0:
            raise ValueError("retries >= 0, concurrency >= 1 and timeout > 0 required")
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.api_key = api_key if api_key is not None else os.environ.get(CREDENTIAL_ENV)
        self._slots = threading.BoundedSemaphore(concurrency)

    def evaluate(self, rubric: str, reference: str, hypothesis: str) -> JudgeScore:
        if rubric not in RUBRICS:
            raise ValueError(f"unknown rubric {rubric!r}")
        body = json.dumps(
            {"rubric": rubric, "reference": reference, "hypothesis": hypothesis}
        ).encode("utf-8")
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    payload = self._post(body)
                return _parse_reply(payload, rubric)
            except MalformedJudgeReply as exc:
                last_error = exc
            except (urllib.error.URLError, OSError, TimeoutError) as exc:
                last_error = exc
            logger.warning("judge attempt %d/%d failed: %s", attempt + 1, self.retries + 1, last_error)
        if isinstance(last_error, MalformedJudgeReply):
            raise last_error
        raise JudgeUnavailable(f"{self.endpoint}: {last_error}") from last_error

    def _post(self, body: bytes) -> bytes:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(self.endpoint, data=body, headers=headers, method="POST")
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return resp.read()


def _parse_reply(payload: bytes, rubric: str) -> JudgeScore:
    try:
        obj = json.loads(payload)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedJudgeReply(f"reply is not JSON: {payload[:80]!r}") from exc
    if not isinstance(obj, dict) or "score" not in obj:
        raise MalformedJudgeReply(f"reply lacks 'score': {obj!r}")
    return JudgeScore(obj["score"], rubric)
