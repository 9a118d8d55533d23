"""Group-relative policy optimization with segment-masked reward streams.

The objective maximized per batch is the token-level mean of the clipped
surrogate minus a k3 KL penalty::

    J = 1/N * sum_{i,t} min(rho * A, clip(rho, 1-eps, 1+eps) * A)
        - beta * 1/N * sum_{i,t} k3(logp_theta, logp_ref)

with ``N`` the total number of completion tokens in the batch and
``rho = exp(logp_theta - logp_old)``.  Advantages are mean-centred per
reward stream within each group (no std division); the context stream is
credited only to context tokens and the logical stream to context and think
tokens.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import GroupTooSmall, MissingStream, ShapeMismatch
from .response_format import SegmentMask
from .rewards import RewardVector

logger = logging.getLogger(__name__)


@dataclass
class RolloutGroup:
    """G completions for one question, with their sampling-time statistics."""

    question_id: str
    prompt: str | int
    completions: list[np.ndarray]
    logp_old: list[np.ndarray]
    logp_ref: list[np.ndarray]
    masks: list[SegmentMask]
    rewards: list[RewardVector]
    texts: list[str] = field(default_factory=list)

    def __post_init__(self):
        g = len(self.completions)
        if not (len(self.logp_old) == len(self.logp_ref) == len(self.masks) == len(self.rewards) == g):
            raise ShapeMismatch(f"group {self.question_id}: per-completion lists differ in length")
        for i, tokens in enumerate(self.completions):
            n = len(tokens)
            if len(self.logp_old[i]) != n or len(self.logp_ref[i]) != n or self.masks[i].num_tokens != n:
                raise ShapeMismatch(f"group {self.question_id}, completion {i}: length mismatch")

    @property
    def size(self) -> int:
        return len(self.completions)

    @property
    def lengths(self) -> list[int]:
        return [len(c) for c in self.completions]

    def drop_empty(self) -> "RolloutGroup":
        """Copy without zero-token completions (they carry no token terms)."""
        keep = [i for i, c in enumerate(self.completions) if len(c) > 0]
        if len(keep) == self.size:
            return self
        logger.warning("group %s: dropping %d empty completion(s)", self.question_id, self.size - len(keep))
        pick = lambda xs: [xs[i] for i in keep]  # noqa: E731
        return RolloutGroup(
            self.question_id,
            self.prompt,
            pick(self.completions),
            pick(self.logp_old),
            pick(self.logp_ref),
            pick(self.masks),
            pick(self.rewards),
            pick(self.texts) if self.texts else [],
        )


def group_advantages(values: Sequence[float]) -> np.ndarray:
    """Values minus their group mean.

    The mean is taken in exact rational arithmetic and each difference is
    rounded once, so constant groups give exact zeros and a common shift of
    representable values leaves the output bit-identical.
    """
    if len(values) < 2:
        raise GroupTooSmall(f"need at least 2 values, got {len(values)}")
    exact = [Fraction(float(v)) for v in values]
    mean = sum(exact) / len(exact)
    return np.array([float(v - mean) for v in exact])


def masked_advantage_field(
    group: RolloutGroup, streams: Sequence[str] | None = None
) -> list[np.ndarray]:
    """Per-token advantages for every completion in ``group``.

    ``streams`` defaults to the streams present in the first reward vector;
    every completion must carry every enabled stream.
    """
    if group.size < 2:
        raise GroupTooSmall(f"group {group.question_id} has {group.size} completion(s)")
    if streams is None:
        streams = group.rewards[0].streams_enabled
    for i, rv in enumerate(group.rewards):
        for s in streams:
            if rv.get(s) is None:
                raise MissingStream(f"group {group.question_id}, completion {i}: no {s} reward")

    def stream(name: str) -> np.ndarray | None:
        if name not in streams:
            return None
        return group_advantages([rv.get(name) for rv in group.rewards])

    base = None
    base_streams = [s for s in ("format", "accuracy") if s in streams]
    if base_streams:
        base = group_advantages([sum(rv.get(s) for s in base_streams) for rv in group.rewards])
    ctx = stream("context")
    log = stream("logical")

    out = []
    for i, mask in enumerate(group.masks):
        adv = np.zeros(mask.num_tokens)
        if base is not None:
            adv += base[i]
        if ctx is not None:
            adv[mask.indicator("context")] += ctx[i]
        if log is not None:
            adv[mask.indicator("context") | mask.indicator("think")] += log[i]
        out.append(adv)
    return out


def ppo_clip_term(ratio, adv, epsilon: float):
    """``min(ratio * adv, clip(ratio, 1-eps, 1+eps) * adv)``; works elementwise on arrays."""
    return np.minimum(ratio * adv, np.clip(ratio, 1 - epsilon, 1 + epsilon) * adv)


def k3_kl(logp_theta, logp_ref):
    """``rho - log(rho) - 1`` with ``rho = pi_ref / pi_theta``; elementwise."""
    log_rho = np.subtract(logp_ref, logp_theta)
    return np.expm1(log_rho) - log_rho


def beta_schedule(k: int, horizon: int, beta1: float, beta2: float) -> float:
    """KL coefficient at step ``k``: linear from beta1 to beta2 over ``horizon`` steps, then flat."""
    if k < 0 or horizon < 1:
        raise ValueError("need k >= 0 and horizon >= 1")
    if k >= horizon:
        # k == horizon is the endpoint of the ramp; return it exactly
        return beta2
    return beta1 + (k / horizon) * (beta2 - beta1)


@dataclass
class LossOutput:
    objective: float
    grad: list[np.ndarray]  # d objective / d logp_theta, one array per completion
    surrogate: float
    kl: float
    clip_fraction: float


def grpo_loss(
    groups: Sequence[RolloutGroup],
    logp_theta: Sequence[Sequence[np.ndarray]],
    epsilon: float,
    beta_hat: float,
    advantages: Sequence[Sequence[np.ndarray]] | None = None,
    streams: Sequence[str] | None = None,
) -> LossOutput:
    """Token-level GRPO objective and its exact gradient w.r.t. ``logp_theta``.

    ``logp_theta[g][i]`` holds current-policy log-probabilities for completion
    ``i`` of group ``g``.  The gradient of a clipped token is 0 when the
    clipped branch is the active (smaller) one.
    """
    if len(logp_theta) != len(groups):
        raise ShapeMismatch("logp_theta must have one entry per group")
    if advantages is None:
        advantages = [masked_advantage_field(g, streams) for g in groups]

    flat_lp, flat_old, flat_ref, flat_adv, sizes = [], [], [], [], []
    for g, lp_g, adv_g in zip(groups, logp_theta, advantages):
        if len(lp_g) != g.size or len(adv_g) != g.size:
            raise ShapeMismatch(f"group {g.question_id}: expected {g.size} completions")
        for i in range(g.size):
            n = len(g.completions[i])
            lp = np.asarray(lp_g[i], dtype=float)
            if lp.shape != (n,) or np.shape(adv_g[i]) != (n,):
                raise ShapeMismatch(f"group {g.question_id}, completion {i}: expected {n} tokens")
            flat_lp.append(lp)
            flat_old.append(g.logp_old[i])
            flat_ref.append(g.logp_ref[i])
            flat_adv.append(adv_g[i])
            sizes.append(n)

    total = sum(sizes)
    if total == 0:
        return LossOutput(0.0, [np.zeros(0) for _ in sizes], 0.0, 0.0, 0.0)
    lp = np.concatenate(flat_lp)
    old = np.concatenate(flat_old).astype(float)
    ref = np.concatenate(flat_ref).astype(float)
    adv = np.concatenate(flat_adv).astype(float)

    ratio = np.exp(lp - old)
    clipped = np.clip(ratio, 1 - epsilon, 1 + epsilon)
    unclipped_term = ratio * adv
    clipped_term = clipped * adv
    term = np.minimum(unclipped_term, clipped_term)
    # unclipped branch active (ties included) -> d/dlp = ratio * adv
    active = unclipped_term <= clipped_term
    d_surr = np.where(active, unclipped_term, 0.0)

    kl = k3_kl(lp, ref)
    d_kl = -np.expm1(ref - lp)

    surrogate = math.fsum(term) / total
    kl_mean = math.fsum(kl) / total
    objective = surrogate - beta_hat * kl_mean
    grad_flat = (d_surr - beta_hat * d_kl) / total

    bounds = np.cumsum(sizes)[:-1]
    grads = np.split(grad_flat, bounds)
    out: list[np.ndarray] = []
    k = 0
    for g in groups:
        out.append(grads[k : k + g.size])
        k += g.size
    clip_fraction = float(np.mean(~active)) if total else 0.0
    return LossOutput(objective, out, surrogate, kl_mean, clip_fraction)


def near_clip_boundary(groups: Sequence[RolloutGroup], logp_theta, epsilon: float, tol: float = 1e-3):
    """Per-completion boolean arrays marking tokens whose ratio is within ``tol`` of 1 +/- eps."""
    out = []
    for g, lp_g in zip(groups, logp_theta):
        row = []
        for i in range(g.size):
            ratio = np.exp(np.asarray(lp_g[i]) - g.logp_old[i])
            row.append((np.abs(ratio - (1 - epsilon)) < tol) | (np.abs(ratio - (1 + epsilon)) < tol))
        out.append(row)
    return out
