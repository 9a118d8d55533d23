"""Rollout, reward, and update loop tying the policy to the GRPO objective."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import TrainConfig
from .data import SampleRecord
from .grpo import RolloutGroup, beta_schedule, grpo_loss, masked_advantage_field
from .judge import JudgeInterface
from .response_format import SegmentMask, segment_token_spans, try_parse
from .rewards import compute_reward_vector
from .toy_policy import ToyPolicy

logger = logging.getLogger(__name__)

ROLLOUT_STREAM = 0x5A11


@dataclass
class StepReport:
    step: int
    objective: float
    beta_hat: float
    mean_r_f: float | None
    mean_r_a: float | None
    mean_r_c: float | None
    mean_r_l: float | None
    grad_norm: float
    wall_ms: float | None = None

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "objective": self.objective,
            "beta_hat": self.beta_hat,
            "mean_r_f": self.mean_r_f,
            "mean_r_a": self.mean_r_a,
            "mean_r_c": self.mean_r_c,
            "mean_r_l": self.mean_r_l,
            "grad_norm": self.grad_norm,
            "wall_ms": self.wall_ms,
        }


def rollout_group(
    policy: ToyPolicy,
    ref_policy: ToyPolicy,
    record: SampleRecord,
    prompt_id: int,
    config: TrainConfig,
    judge: JudgeInterface | None,
    rng: np.random.Generator,
) -> RolloutGroup:
    """Sample ``config.group_size`` completions and score every enabled stream."""
    seqs = policy.sample_group(prompt_id, config.group_size, config.max_completion_tokens, rng)
    texts, masks, rewards = [], [], []
    for seq in seqs:
        text, offsets = policy.render(seq)
        resp = try_parse(text)
        masks.append(segment_token_spans(resp, offsets) if resp else SegmentMask.empty(len(seq)))
        rewards.append(
            compute_reward_vector(
                text,
                record.gold,
                config.streams,
                judge=judge,
                reference_context=record.reference_context,
                mapping=config.mapping,
            )
        )
        texts.append(text)
    return RolloutGroup(
        question_id=record.id,
        prompt=prompt_id,
        completions=seqs,
        logp_old=[policy.log_probs(prompt_id, s) for s in seqs],
        logp_ref=[ref_policy.log_probs(prompt_id, s) for s in seqs],
        masks=masks,
        rewards=rewards,
        texts=texts,
    )


def rollout_rng(seed: int, step: int, prompt_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, ROLLOUT_STREAM, step, prompt_id])


def train_step(
    policy: ToyPolicy,
    ref_policy: ToyPolicy,
    batch: Sequence[tuple[SampleRecord, int]],
    judge: JudgeInterface | None,
    config: TrainConfig,
    k: int,
    horizon: int,
    workers: int = 1,
) -> tuple[StepReport, list[RolloutGroup]]:
    """One rollout + single gradient-ascent update; ``policy.params`` is modified in place.

    ``batch`` pairs each record with its prompt id in the policy table.
    """
    t0 = time.perf_counter()

    def collect(item):
        record, pid = item
        return rollout_group(policy, ref_policy, record, pid, config, judge, rollout_rng(config.seed, k, pid))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            groups = list(pool.map(collect, batch))
    else:
        groups = [collect(item) for item in batch]
    groups = [g.drop_empty() for g in groups]
    groups = [g for g in groups if g.size >= 2]

    beta_hat = beta_schedule(k, horizon, config.beta1, config.beta2)
    advantages = [masked_advantage_field(g, config.streams) for g in groups]
    # pi_old is the pre-step policy, so current log-probs equal the sampling ones
    logp_theta = [g.logp_old for g in groups]
    loss = grpo_loss(groups, logp_theta, config.epsilon, beta_hat, advantages=advantages)

    grad = np.zeros_like(policy.params)
    for g, dlogp in zip(groups, loss.grad):
        for seq, d in zip(g.completions, dlogp):
            policy.backprop(g.prompt, seq, d, grad)
    policy.params += config.learning_rate * grad

    def mean_of(attr):
        vals = [getattr(rv, attr) for g in groups for rv in g.rewards]
        if not vals or vals[0] is None:
            return None
        return math.fsum(vals) / len(vals)

    report = StepReport(
        step=k,
        objective=loss.objective,
        beta_hat=beta_hat,
        mean_r_f=mean_of("r_f"),
        mean_r_a=mean_of("r_a"),
        mean_r_c=mean_of("r_c"),
        mean_r_l=mean_of("r_l"),
        grad_norm=float(np.sqrt(np.sum(grad * grad))),
        wall_ms=(time.perf_counter() - t0) * 1000.0,
    )
    return report, groups


def train(
    policy: ToyPolicy,
    records: Sequence[SampleRecord],
    judge: JudgeInterface | None,
    config: TrainConfig,
    steps: int,
    log_path=None,
    log_wall_time: bool = False,
    workers: int = 1,
    ref_policy: ToyPolicy | None = None,
) -> list[StepReport]:
    """Run ``steps`` updates over all records (record ``i`` uses prompt id ``i``).

    Each report is appended to ``log_path`` as one JSON line.  Wall time is
    logged as null unless ``log_wall_time`` so that logs are reproducible.
    """
    if len(records) > policy.num_prompts:
        raise ValueError(f"{len(records)} records but the policy has {policy.num_prompts} prompt slots")
    ref = ref_policy if ref_policy is not None else policy.copy()
    horizon = config.horizon(steps)
    batch = [(rec, i) for i, rec in enumerate(records)]
    reports = []
    log = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        for k in range(steps):
            report, _ = train_step(policy, ref, batch, judge, config, k, horizon, workers)
            if not log_wall_time:
                report.wall_ms = None
            reports.append(report)
            if log is not None:
                log.write(json.dumps(report.to_json()) + "\n")
            if k % 50 == 0:
                logger.info(
                    "step %d objective %.4g r_f %s r_a %s", k, report.objective, report.mean_r_f, report.mean_r_a
                )
    finally:
        if log is not None:
            log.close()
    return reports


def evaluate_policy(
    policy: ToyPolicy,
    records: Sequence[SampleRecord],
    samples: int,
    max_tokens: int,
    seed: int,
) -> dict[str, float]:
    """Mean format and accuracy reward over ``samples`` rollouts per record (no judge needed)."""
    fmt, acc = [], []
    for pid, rec in enumerate(records):
        rng = np.random.default_rng([seed, 0xE7A1, pid])
        for seq in policy.sample_group(pid, samples, max_tokens, rng):
            text, _ = policy.render(seq)
            rv = compute_reward_vector(text, rec.gold, ("format", "accuracy"))
            fmt.append(rv.r_f)
            acc.append(rv.r_a)
    return {"format": float(np.mean(fmt)), "accuracy": float(np.mean(acc))}
