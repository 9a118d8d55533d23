"""
Reward streams and segment masks
================================

Score one tagged response on all four streams, then see which tokens each
stream's advantage reaches.
"""

import numpy as np

from ctxgrpo.grpo import RolloutGroup, masked_advantage_field
from ctxgrpo.judge import MockJudge
from ctxgrpo.response_format import parse_tagged_response, segment_token_spans
from ctxgrpo.rewards import compute_reward_vector
from ctxgrpo.toy_policy import ToyPolicy, make_tag_echo_task

task = make_tag_echo_task(0)
print(task.prompt)
print("reference context:", task.reference_context)

# the target response, and a sloppier one with a vague context block
good = task.target_response
vague = good.replace(task.reference_context.split()[0] + " ", "")
print(good)
print(vague)

judge = MockJudge()
streams = ("format", "accuracy", "context", "logical")
for raw in (good, vague):
    print(compute_reward_vector(raw, task.gold, streams, judge, task.reference_context))

# a broken layout still gets answer credit, but no format, context or logic credit
broken = good.replace("</think>", "")
print(compute_reward_vector(broken, task.gold, streams, judge, task.reference_context))

# %%
# Token masks.  The toy vocabulary has one token per tag, so a mask is just
# the token positions inside each block.
pol = ToyPolicy(1, n=2)
seqs, masks, rewards = [], [], []
for raw, toks in ((good, task.target_tokens), (vague, None)):
    if toks is None:
        toks = [t for t in task.target_tokens]
        toks.remove(task.reference_context.split()[0])
    seq = pol.encode(list(toks) + ["<eos>"])
    text, offsets = pol.render(seq)
    assert text == raw
    seqs.append(seq)
    masks.append(segment_token_spans(parse_tagged_response(text), offsets))
    rewards.append(compute_reward_vector(text, task.gold, streams, judge, task.reference_context))

group = RolloutGroup(task.task_id, 0, seqs, [np.zeros(len(s)) for s in seqs], [np.zeros(len(s)) for s in seqs], masks, rewards)
for seq, adv in zip(seqs, masked_advantage_field(group)):
    for tok, a in zip(seq, adv):
        print(f"{pol.vocab[tok]:>12s} {a:+.2f}")
    print()
# only the context stream differs between the two responses, so only
# context tokens carry a nonzero advantage
