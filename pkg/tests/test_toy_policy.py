import itertools
from collections import Counter

import numpy as np
import pytest

from ctxgrpo.config import TrainConfig
from ctxgrpo.data import task_record
from ctxgrpo.errors import UnknownToken
from ctxgrpo.judge import MockJudge
from ctxgrpo.rewards import compute_reward_vector
from ctxgrpo.toy_policy import (
    DEFAULT_VOCAB,
    LETTERS,
    ToyPolicy,
    init_policy,
    make_tag_echo_task,
    make_task_suite,
)
from ctxgrpo.trainer import train


def random_policy(n=1, prompts=2, seed=0, temperature=1.0):
    pol = ToyPolicy(prompts, n=n, temperature=temperature)
    pol.params = np.random.default_rng(seed).normal(0, 1.5, pol.params.shape)
    return pol


# --- probabilities -------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2])
def test_normalization_at_every_key(n):
    pol = random_policy(n)
    V = pol.vocab_size
    # every history of length <= n reaches a distinct key, BOS-padded ones included
    for length in range(n + 1):
        for prev in itertools.product(range(V), repeat=length):
            assert abs(pol.distribution(1, list(prev)).sum() - 1) < 1e-12


def test_uniform_log_probs():
    pol = ToyPolicy(1)
    lp = pol.log_probs(0, ["<context>", "red", "</context>"])
    np.testing.assert_allclose(lp, -np.log(len(DEFAULT_VOCAB)))


def test_single_token_vocab():
    pol = ToyPolicy(1, vocab=("x",), eos="none")
    pol.params[:] = 3.0
    assert pol.log_probs(0, ["x", "x", "x"]).tolist() == [0.0, 0.0, 0.0]
    assert not pol.grad_log_prob(0, ["x", "x"]).any()


def brute_force_logprob(pol, prompt, seq):
    """Product of conditionals computed directly from the table, one position at a time."""
    total = 0.0
    history = [pol.bos_id] * pol.n
    for tok in seq:
        key = 0
        for h in history:
            key = key * (pol.vocab_size + 1) + h
        row = pol.params[prompt, key] / pol.temperature
        total += row[tok] - np.log(np.sum(np.exp(row)))
        history = history[1:] + [tok]
    return total


@pytest.mark.parametrize("n,temperature", [(1, 1.0), (2, 1.0), (2, 0.7)])
def test_log_probs_match_path_probability(n, temperature):
    pol = random_policy(n, temperature=temperature)
    rng = np.random.default_rng(5)
    for _ in range(20):
        seq = rng.integers(0, pol.vocab_size, rng.integers(1, 12))
        assert pol.log_probs(1, seq).sum() == pytest.approx(brute_force_logprob(pol, 1, seq), abs=1e-10)


def test_exhaustive_paths_sum_to_one():
    """Over all length-3 sequences of a small vocabulary the path probabilities sum to 1."""
    pol = ToyPolicy(1, vocab=("a", "b", "c"), n=2, eos="none")
    pol.params = np.random.default_rng(1).normal(size=pol.params.shape)
    total = sum(np.exp(pol.log_probs(0, list(p)).sum()) for p in itertools.product(range(3), repeat=3))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_unknown_token():
    pol = ToyPolicy(1)
    with pytest.raises(UnknownToken):
        pol.log_probs(0, ["nope"])
    with pytest.raises(UnknownToken):
        pol.log_probs(0, np.array([99]))
    with pytest.raises(UnknownToken):
        pol.grad_log_prob(0, [-1])


# --- gradients -----------------------------------------------------------------


@pytest.mark.parametrize("n,temperature", [(1, 1.0), (2, 1.3)])
def test_grad_log_prob_finite_differences(n, temperature):
    pol = random_policy(n, temperature=temperature)
    rng = np.random.default_rng(7)
    seq = rng.integers(0, pol.vocab_size, 10)
    grad = pol.grad_log_prob(1, seq)
    keys = pol.keys(seq)
    h = 1e-5
    # half the coordinates at visited keys, the rest anywhere
    coords = [(1, int(rng.choice(keys)), int(rng.integers(pol.vocab_size))) for _ in range(5)]
    coords += [tuple(int(rng.integers(s)) for s in pol.params.shape) for _ in range(5)]
    for c in coords:
        old = pol.params[c]
        pol.params[c] = old + h
        up = pol.log_probs(1, seq).sum()
        pol.params[c] = old - h
        dn = pol.log_probs(1, seq).sum()
        pol.params[c] = old
        fd = (up - dn) / (2 * h)
        if grad[c] == 0.0:
            assert abs(fd) < 1e-9
        else:
            assert abs(fd - grad[c]) / abs(grad[c]) < 1e-6


def test_grad_zero_sum_and_unvisited_keys():
    pol = random_policy(2)
    seq = [0, 5, 5, 9, 20]
    grad = pol.grad_log_prob(0, seq)
    np.testing.assert_allclose(grad.sum(axis=-1), 0.0, atol=1e-12)
    visited = set(pol.keys(np.array(seq)).tolist())
    for k in range(pol.params.shape[1]):
        if k not in visited:
            assert not grad[0, k].any()
    assert not grad[1].any()


# --- sampling ------------------------------------------------------------------


def test_degenerate_distribution_sampling():
    pol = ToyPolicy(1)
    red = pol.index["red"]
    pol.params[..., red] = 100.0
    seq = pol.sample_completion(0, 7, 0)
    assert seq.tolist() == [red] * 7
    pol.params[..., pol.eos_id] = 200.0
    assert pol.sample_completion(0, 7, 0).tolist() == [pol.eos_id]


def test_sampling_deterministic_given_seed():
    pol = random_policy(2)
    a = pol.sample_completion(0, 30, 123)
    b = pol.sample_completion(0, 30, 123)
    assert a.tobytes() == b.tobytes()


def test_uniform_frequencies():
    pol = ToyPolicy(1, vocab=("w", "x", "y", "z"), eos="none")
    seqs = pol.sample_group(0, 100_000, 1, np.random.default_rng(0))
    freq = np.bincount(np.concatenate(seqs), minlength=4) / 100_000
    assert np.all(np.abs(freq - 0.25) < 0.01)


def test_sampling_frequencies_match_distribution():
    pol = random_policy(1, prompts=1, seed=3)
    seqs = pol.sample_group(0, 50_000, 2, np.random.default_rng(1))
    second = Counter(int(s[1]) for s in seqs if s[0] == seqs[0][0] and len(s) == 2)
    first = seqs[0][0]
    p = pol.distribution(0, [first])
    total = sum(second.values())
    for tok, cnt in second.items():
        # 5 sigma multinomial band
        assert abs(cnt / total - p[tok]) < 5 * np.sqrt(p[tok] * (1 - p[tok]) / total) + 1e-3


def test_sampled_log_probs_finite():
    pol = init_policy(1, prior_strength=4.0, n=2)
    for seq in pol.sample_group(0, 64, 40, np.random.default_rng(2)):
        assert np.all(np.isfinite(pol.log_probs(0, seq)))


def test_render_offsets():
    pol = ToyPolicy(1)
    seq = pol.encode(["<context>", "red", "</context>", "<eos>"])
    text, offsets = pol.render(seq)
    assert text == "<context>red </context>"
    assert offsets == [(0, 9), (9, 13), (13, 23), (23, 23)]


# --- checkpoints ---------------------------------------------------------------


def test_checkpoint_roundtrip_byte_stable():
    pol = random_policy(2)
    text = pol.to_json()
    back = ToyPolicy.from_json(text)
    assert back.to_json() == text
    assert np.array_equal(back.params, pol.params)
    assert back.vocab == pol.vocab and back.n == 2


def test_checkpoint_version_check():
    text = ToyPolicy(1).to_json().replace('"version":1', '"version":99')
    with pytest.raises(ValueError):
        ToyPolicy.from_json(text)


# --- tasks ---------------------------------------------------------------------


def test_tag_echo_seed0_target_earns_full_reward():
    task = make_tag_echo_task(0)
    raw = task.target_response
    assert raw.startswith("<context>") and raw.endswith("</answer>")
    assert "<answer>B </answer>" in raw
    rv = compute_reward_vector(
        raw, task.gold, ("format", "accuracy", "context", "logical"), MockJudge(), task.reference_context
    )
    assert (rv.r_f, rv.r_a, rv.r_c, rv.r_l) == (1.0, 1.0, 1.0, 1.0)


def test_target_is_expressible_in_vocab():
    for task in make_task_suite(20, seed=3):
        pol = ToyPolicy(1)
        seq = pol.encode(list(task.target_tokens) + ["<eos>"])
        assert pol.render(seq)[0] == task.target_response


def test_gold_letters_uniform():
    counts = Counter(make_tag_echo_task(s).gold.gold_choice for s in range(1000))
    assert set(counts) == set(LETTERS)
    for c in counts.values():
        assert abs(c / 1000 - 0.25) <= 0.05


def test_reference_context_self_coverage():
    task = make_tag_echo_task(4)
    score = MockJudge().evaluate("context_coverage", task.reference_context, task.reference_context)
    assert score.raw_score == 5


def test_warm_start_format_is_rare_but_possible():
    pol = init_policy(8, prior_strength=4.0, n=2)
    tasks = make_task_suite(8)
    ok = 0
    for t in tasks:
        for seq in pol.sample_group(t.prompt_id, 64, 40, np.random.default_rng([t.prompt_id, 1])):
            ok += compute_reward_vector(pol.render(seq)[0], t.gold, ("format",)).r_f
    assert 0 < ok / 512 < 0.2


# --- policy-gradient sanity ----------------------------------------------------

SANITY_LR = 62.5  # per-prompt step equal to the 8-task acceptance run (500 / 8)


@pytest.fixture(scope="module")
def format_only_run():
    rec = task_record(make_tag_echo_task(0))
    pol = init_policy(1, prior_strength=4.0)
    cfg = TrainConfig(learning_rate=SANITY_LR, max_completion_tokens=40, streams=("format",), seed=0)
    reports = train(pol, [rec], None, cfg, 2000)
    return [float(np.mean([r.mean_r_f for r in reports[i : i + 100]])) for i in range(0, 2000, 100)]


@pytest.mark.xfail(
    strict=True,
    reason="window means plateau near 0.97 where G=8 sampling noise (~0.007 per window) exceeds the residual climb",
)
def test_format_reward_windows_monotone(format_only_run):
    windows = format_only_run
    assert all(b >= a for a, b in zip(windows, windows[1:])), windows


def test_format_reward_rises_under_policy_gradient(format_only_run):
    windows = format_only_run
    assert windows[-1] - windows[0] >= 0.3
    assert min(windows[5:]) >= 0.85
    # each half of the run beats the one before it
    assert np.mean(windows[10:]) > np.mean(windows[:10])
