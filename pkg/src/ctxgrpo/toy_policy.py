"""A tabular autoregressive policy with exact log-probabilities and gradients.

Logits are stored per (prompt id, previous ``n`` tokens), so the policy is
small enough to train in seconds while exercising the full GRPO pipeline:
sampling, rendering to text, segment masks, rewards, and exact backprop.
Tag delimiters are single tokens.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import UnknownToken
from .rewards import GoldSpec

CHECKPOINT_VERSION = 1

TAGS = ("<context>", "</context>", "<think>", "</think>", "<answer>", "</answer>")
LETTERS = ("A", "B", "C", "D")
COLORS = ("red", "blue", "green")
OBJECTS = ("box", "cup", "key")
FACT_WORDS = COLORS + OBJECTS + ("holds",)
REASON_WORDS = ("because", "therefore", "verify")
EOS = "<eos>"
DEFAULT_VOCAB = TAGS + LETTERS + FACT_WORDS + REASON_WORDS + (EOS,)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    z = x - m
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


class ToyPolicy:
    """Softmax policy over ``vocab`` with a logit table ``params[prompt, key, token]``.

    ``key`` encodes the previous ``n`` tokens (left-padded with a BOS marker).
    """

    def __init__(
        self,
        num_prompts: int,
        vocab: Sequence[str] = DEFAULT_VOCAB,
        n: int = 1,
        temperature: float = 1.0,
        params: np.ndarray | None = None,
        eos: str = EOS,
    ):
        if n < 1:
            raise ValueError("n must be >= 1")
        if temperature <= 0:
            raise ValueError("temperature must be > 0")
        self.vocab = tuple(vocab)
        if len(set(self.vocab)) != len(self.vocab):
            raise ValueError("vocabulary entries must be unique")
        self.index = {tok: i for i, tok in enumerate(self.vocab)}
        self.n = n
        self.temperature = float(temperature)
        self.eos_id = self.index.get(eos)
        self.bos_id = len(self.vocab)
        shape = (num_prompts, (len(self.vocab) + 1) ** n, len(self.vocab))
        if params is None:
            params = np.zeros(shape)
        params = np.array(params, dtype=float)
        if params.shape != shape:
            raise ValueError(f"params shape {params.shape} != {shape}")
        self.params = params

    @property
    def num_prompts(self) -> int:
        return self.params.shape[0]

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def copy(self) -> "ToyPolicy":
        eos = self.vocab[self.eos_id] if self.eos_id is not None else None
        return ToyPolicy(self.num_prompts, self.vocab, self.n, self.temperature, self.params.copy(), eos=eos)

    # --- encoding -----------------------------------------------------------

    def encode(self, tokens: Sequence) -> np.ndarray:
        if isinstance(tokens, np.ndarray) and tokens.dtype.kind in "iu":
            if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab_size):
                raise UnknownToken(f"token ids outside vocabulary of size {self.vocab_size}")
            return tokens.astype(np.int64, copy=False)
        ids = []
        for tok in tokens:
            if isinstance(tok, str):
                if tok not in self.index:
                    raise UnknownToken(f"{tok!r} not in vocabulary")
                ids.append(self.index[tok])
            else:
                t = int(tok)
                if not 0 <= t < self.vocab_size:
                    raise UnknownToken(f"token id {t} outside vocabulary of size {self.vocab_size}")
                ids.append(t)
        return np.array(ids, dtype=np.int64)

    def keys(self, seq: np.ndarray) -> np.ndarray:
        """Conditioning-key index for every position of ``seq``."""
        padded = np.concatenate([np.full(self.n, self.bos_id, dtype=np.int64), seq])
        base = self.vocab_size + 1
        keys = np.zeros(len(seq), dtype=np.int64)
        for j in range(self.n):
            # token at offset t + j predicts position t; the most recent has weight base**0
            keys += padded[j : j + len(seq)] * base ** (self.n - 1 - j)
        return keys

    def render(self, seq: Sequence[int]) -> tuple[str, list[tuple[int, int]]]:
        """Text of a token sequence plus each token's character interval.

        Tags render verbatim, the end token renders empty, every other token
        renders as the word followed by a space.
        """
        parts, offsets, pos = [], [], 0
        for t in seq:
            tok = self.vocab[int(t)]
            if int(t) == self.eos_id:
                piece = ""
            elif tok.startswith("<") and tok.endswith(">"):
                piece = tok
            else:
                piece = tok + " "
            parts.append(piece)
            offsets.append((pos, pos + len(piece)))
            pos += len(piece)
        return "".join(parts), offsets

    # --- probabilities ----------------------------------------------------------

    def logits(self, prompt_id: int, keys: np.ndarray) -> np.ndarray:
        return self.params[prompt_id, keys] / self.temperature

    def distribution(self, prompt_id: int, prev: Sequence = ()) -> np.ndarray:
        """Next-token probabilities after the tokens ``prev``."""
        seq = np.concatenate([self.encode(prev), [0]]).astype(np.int64)
        key = self.keys(seq)[-1:]
        return np.exp(_log_softmax(self.logits(prompt_id, key)))[0]

    def log_probs(self, prompt_id: int, sequence: Sequence) -> np.ndarray:
        seq = self.encode(sequence)
        if len(seq) == 0:
            return np.zeros(0)
        logp = _log_softmax(self.logits(prompt_id, self.keys(seq)))
        return logp[np.arange(len(seq)), seq]

    def backprop(self, prompt_id: int, sequence: Sequence, dlogp: np.ndarray, out: np.ndarray) -> None:
        """Accumulate ``sum_t dlogp[t] * d logp[t] / d params`` into ``out``."""
        seq = self.encode(sequence)
        if len(seq) == 0:
            return
        keys = self.keys(seq)
        probs = np.exp(_log_softmax(self.logits(prompt_id, keys)))
        w = np.asarray(dlogp, dtype=float) / self.temperature
        local = -w[:, None] * probs
        local[np.arange(len(seq)), seq] += w
        np.add.at(out[prompt_id], keys, local)

    def grad_log_prob(self, prompt_id: int, sequence: Sequence) -> np.ndarray:
        """Gradient of the sequence log-probability with respect to ``params``."""
        out = np.zeros_like(self.params)
        seq = self.encode(sequence)
        self.backprop(prompt_id, seq, np.ones(len(seq)), out)
        return out

    # --- sampling ---------------------------------------------------------------

    def sample_group(
        self, prompt_id: int, count: int, max_tokens: int, rng: np.random.Generator
    ) -> list[np.ndarray]:
        """``count`` independent completions, sampled position by position in lockstep."""
        if max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        base = self.vocab_size + 1
        history = np.full((count, self.n), self.bos_id, dtype=np.int64)
        out = np.zeros((count, max_tokens), dtype=np.int64)
        lengths = np.full(count, max_tokens)
        alive = np.ones(count, dtype=bool)
        weights = base ** np.arange(self.n - 1, -1, -1)
        for t in range(max_tokens):
            keys = history @ weights
            probs = np.exp(_log_softmax(self.logits(prompt_id, keys)))
            cdf = np.cumsum(probs, axis=1)
            u = rng.random(count) * cdf[:, -1]
            tok = (cdf <= u[:, None]).sum(axis=1)
            tok = np.minimum(tok, self.vocab_size - 1)
            tok = np.where(alive, tok, 0)
            out[:, t] = tok
            history = np.concatenate([history[:, 1:], tok[:, None]], axis=1)
            if self.eos_id is not None:
                ended = alive & (tok == self.eos_id)
                lengths[ended] = t + 1
                alive &= ~ended
            if not alive.any():
                break
        return [out[i, : lengths[i]].copy() for i in range(count)]

    def sample_completion(self, prompt_id: int, max_tokens: int, rng_seed) -> np.ndarray:
        rng = np.random.default_rng(rng_seed)
        return self.sample_group(prompt_id, 1, max_tokens, rng)[0]

    # --- persistence ------------------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "version": CHECKPOINT_VERSION,
            "vocab": list(self.vocab),
            "n": self.n,
            "temperature": self.temperature,
            "eos": self.vocab[self.eos_id] if self.eos_id is not None else None,
            "params": self.params.tolist(),
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ToyPolicy":
        doc = json.loads(text)
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
        params = np.array(doc["params"], dtype=float)
        return cls(
            params.shape[0], doc["vocab"], doc["n"], doc["temperature"], params, eos=doc.get("eos")
        )


def grammar_prior(vocab: Sequence[str] = DEFAULT_VOCAB, strength: float = 2.0, n: int = 1) -> np.ndarray:
    """Logit bias of ``strength`` on the transitions of a well-formed tagged response.

    Stands in for a cold-start model that has seen the format but not the
    tasks: it makes valid responses rare but not vanishingly so.  Returns a
    ``(keys, vocab)`` table to be broadcast over prompts.
    """
    idx = {t: i for i, t in enumerate(vocab)}
    facts = [idx[w] for w in FACT_WORDS if w in idx]
    reasons = [idx[w] for w in REASON_WORDS if w in idx]
    letters = [idx[w] for w in LETTERS if w in idx]
    # fact words fill the context block, reasoning words the think block:
    # a grammar a one-token history can follow
    follow: dict[int | None, list[int]] = {
        None: [idx["<context>"]],
        idx["<context>"]: facts,
        idx["</context>"]: [idx["<think>"]],
        idx["<think>"]: reasons,
        idx["</think>"]: [idx["<answer>"]],
        idx["<answer>"]: letters,
        idx["</answer>"]: [idx[EOS]] if EOS in idx else [],
    }
    for w in facts:
        follow[w] = facts + [idx["</context>"]]
    for w in reasons:
        follow[w] = reasons + [idx["</think>"]]
    for w in letters:
        follow[w] = [idx["</answer>"]]

    V = len(vocab)
    base = V + 1
    table = np.zeros(((V + 1) ** n, V))
    for key in range((V + 1) ** n):
        last = key % base
        prev = None if last == V else last
        for nxt in follow.get(prev, []):
            table[key, nxt] = strength
    return table


def init_policy(
    num_prompts: int,
    prior_strength: float = 2.0,
    n: int = 1,
    vocab: Sequence[str] = DEFAULT_VOCAB,
    temperature: float = 1.0,
) -> ToyPolicy:
    table = grammar_prior(vocab, prior_strength, n)
    params = np.broadcast_to(table, (num_prompts,) + table.shape).copy()
    return ToyPolicy(num_prompts, vocab, n, temperature, params)


@dataclass(frozen=True)
class SyntheticTask:
    """A toy multiple-choice question answerable from facts stated in its prompt."""

    task_id: str
    prompt_id: int
    prompt: str
    gold: GoldSpec
    reference_context: str
    target_tokens: tuple[str, ...]

    @property
    def target_response(self) -> str:
        text = []
        for tok in self.target_tokens:
            text.append(tok if tok.startswith("<") else tok + " ")
        return "".join(text)


def make_tag_echo_task(seed: int, prompt_id: int = 0) -> SyntheticTask:
    rng = np.random.default_rng([seed, 0x7A5C])
    letter = LETTERS[int(rng.integers(len(LETTERS)))]
    color = COLORS[int(rng.integers(len(COLORS)))]
    obj = OBJECTS[int(rng.integers(len(OBJECTS)))]
    prompt = (
        f"The {color} {obj} holds option {letter}. "
        f"Which option does the {color} {obj} hold? Options: {', '.join(LETTERS)}."
    )
    facts = (color, obj, "holds", letter)
    # every (prev2, prev1) key on this path has a single successor
    target = (
        ("<context>",) + facts + ("</context>", "<think>", "because", letter, "therefore", "verify", "</think>")
        + ("<answer>", letter, "</answer>")
    )
    return SyntheticTask(
        task_id=f"tag_echo_{seed}",
        prompt_id=prompt_id,
        prompt=prompt,
        gold=GoldSpec.mc_single(letter),
        reference_context=" ".join(facts),
        target_tokens=target,
    )


def make_task_suite(count: int, seed: int = 0) -> list[SyntheticTask]:
    return [make_tag_echo_task(seed * 100_003 + i, prompt_id=i) for i in range(count)]

