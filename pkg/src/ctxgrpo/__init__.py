"""Segment-masked GRPO with format, accuracy, context and logical rewards."""

from .config import STAGE_STREAMS, TrainConfig, stage_config
from .grpo import (
    LossOutput,
    RolloutGroup,
    beta_schedule,
    group_advantages,
    grpo_loss,
    k3_kl,
    masked_advantage_field,
    ppo_clip_term,
)
from .judge import CountingJudge, JudgeInterface, JudgeScore, MockJudge, RemoteJudge
from .response_format import (
    SegmentMask,
    TaggedResponse,
    format_reward,
    parse_tagged_response,
    segment_token_spans,
)
from .rewards import (
    GoldSpec,
    RewardVector,
    accuracy_reward,
    compute_reward_vector,
    context_reward,
    judge_score_to_reward,
    logical_reward,
    multi_answer_f1,
    wer,
)
from .toy_policy import ToyPolicy, init_policy, make_tag_echo_task, make_task_suite

__version__ = "0.1.0"

__all__ = [
    "STAGE_STREAMS",
    "TrainConfig",
    "stage_config",
    "LossOutput",
    "RolloutGroup",
    "beta_schedule",
    "group_advantages",
    "grpo_loss",
    "k3_kl",
    "masked_advantage_field",
    "ppo_clip_term",
    "CountingJudge",
    "JudgeInterface",
    "JudgeScore",
    "MockJudge",
    "RemoteJudge",
    "SegmentMask",
    "TaggedResponse",
    "format_reward",
    "parse_tagged_response",
    "segment_token_spans",
    "GoldSpec",
    "RewardVector",
    "accuracy_reward",
    "compute_reward_vector",
    "context_reward",
    "judge_score_to_reward",
    "logical_reward",
    "multi_answer_f1",
    "wer",
    "ToyPolicy",
    "init_policy",
    "make_tag_echo_task",
    "make_task_suite",
]
