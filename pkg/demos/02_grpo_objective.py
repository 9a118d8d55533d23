"""
The clipped objective and its gradient
======================================

Build one rollout group from the warm-start toy policy, evaluate the GRPO
objective, and check the analytic gradient against finite differences.
"""

import numpy as np

from ctxgrpo.grpo import RolloutGroup, beta_schedule, grpo_loss, k3_kl, ppo_clip_term
from ctxgrpo.judge import MockJudge
from ctxgrpo.response_format import SegmentMask, segment_token_spans, try_parse
from ctxgrpo.rewards import compute_reward_vector
from ctxgrpo.toy_policy import init_policy, make_tag_echo_task

# clipping only bites on the side that would over-reward a move
for ratio in (0.5, 1.0, 1.5):
    print(ratio, ppo_clip_term(ratio, 1.0, 0.2), ppo_clip_term(ratio, -1.0, 0.2))

# k3 is nonnegative and zero only when the two log-probs agree
print(k3_kl(np.array([-1.0, -1.0, -1.0]), np.array([-2.0, -1.0, 0.0])))

# the KL weight ramps from beta1 down to beta2 over the first S steps
print([round(beta_schedule(k, 100, 0.04, 0.01), 4) for k in (0, 25, 50, 100, 200)])

# %%
task = make_tag_echo_task(1)
old = init_policy(1, prior_strength=6.0, n=2)
ref = old.copy()
rng = np.random.default_rng(0)
seqs = old.sample_group(0, 8, 40, rng)
masks, rewards = [], []
for s in seqs:
    text, offsets = old.render(s)
    resp = try_parse(text)
    masks.append(segment_token_spans(resp, offsets) if resp else SegmentMask.empty(len(s)))
    rewards.append(compute_reward_vector(text, task.gold, ("format", "accuracy", "context", "logical"), MockJudge(), task.reference_context))
    print(f"{rewards[-1].r_f:.0f} {rewards[-1].r_a:.0f} {text[:70]}")

group = RolloutGroup(task.task_id, 0, seqs, [old.log_probs(0, s) for s in seqs], [ref.log_probs(0, s) for s in seqs], masks, rewards)

# move the policy a little so the ratios are not all 1
pol = old.copy()
pol.params += rng.normal(0, 0.1, pol.params.shape)


def objective(p):
    lps = [[p.log_probs(0, s) for s in seqs]]
    return grpo_loss([group], lps, 0.2, 0.04)


out = objective(pol)
print("objective", out.objective, "kl", out.kl, "clipped", out.clip_fraction)

grad = np.zeros_like(pol.params)
for s, d in zip(seqs, out.grad[0]):
    pol.backprop(0, s, d, grad)

# compare at the five largest gradient entries
h = 1e-5
for flat in np.argsort(-np.abs(grad).ravel())[:5]:
    c = np.unravel_index(flat, grad.shape)
    pol.params[c] += h
    up = objective(pol).objective
    pol.params[c] -= 2 * h
    dn = objective(pol).objective
    pol.params[c] += h
    print(c, grad[c], (up - dn) / (2 * h))
