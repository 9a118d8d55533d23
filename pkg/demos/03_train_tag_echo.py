"""
Training the toy policy
=======================

Eight tag-echo questions, eight completions each.  The warm-start policy
rarely writes the full tag layout; a few hundred GRPO steps fix that.
"""

import numpy as np

from ctxgrpo.config import TrainConfig, stage_config
from ctxgrpo.data import task_record
from ctxgrpo.judge import MockJudge
from ctxgrpo.toy_policy import init_policy, make_task_suite
from ctxgrpo.trainer import evaluate_policy, train

records = [task_record(t) for t in make_task_suite(8)]
policy = init_policy(len(records), prior_strength=4.0, n=2)

# the toy table moves far less per unit step than a network, hence the large rate
config = TrainConfig(learning_rate=500, max_completion_tokens=40, streams=stage_config("rl_stage1"))

print("before", evaluate_policy(policy, records, 64, 40, seed=0))
reports = train(policy, records, MockJudge(), config, steps=300)
print("after ", evaluate_policy(policy, records, 64, 40, seed=0))

for start in range(0, 300, 50):
    window = reports[start : start + 50]
    means = [np.mean([getattr(r, f) for r in window]) for f in ("mean_r_f", "mean_r_a", "mean_r_c", "mean_r_l")]
    print(start, " ".join(f"{m:.2f}" for m in means), f"beta {window[0].beta_hat:.3f}")

# what the trained policy writes for the first question
seq = policy.sample_completion(0, 40, rng_seed=1)
print(records[0].prompt)
print(policy.render(seq)[0])
