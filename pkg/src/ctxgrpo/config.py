"""Training hyperparameters and RL stage definitions."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .errors import ConfigError, UnknownStage
from .rewards import STREAMS, ScoreMapping

STAGE_STREAMS = {
    "rl_stage1": ("format", "accuracy", "context", "logical"),
    "rl_stage2": ("format", "accuracy"),
}


def stage_config(stage: str) -> tuple[str, ...]:
    """Reward streams enabled in an RL stage."""
    try:
        return STAGE_STREAMS[stage]
    except KeyError:
        raise UnknownStage(stage) from None


@dataclass
class TrainConfig:
    """Optimizer and recipe settings.

    Defaults are the full-scale values (clip 0.2, KL coefficient decaying from
    0.04 to 0.01, 8 completions per question, lr 1e-6, 2048 output tokens).
    ``kl_horizon=None`` means half of the total number of steps.
    """

    epsilon: float = 0.2
    beta1: float = 0.04
    beta2: float = 0.01
    kl_horizon: int | None = None
    group_size: int = 8
    learning_rate: float = 1e-6
    max_completion_tokens: int = 2048
    judge_mapping: str = "threshold"
    judge_tau: int = 4
    streams: tuple[str, ...] = STAGE_STREAMS["rl_stage1"]
    filter_low: float = 0.0
    filter_high: float = 0.75
    seed: int = 0

    def __post_init__(self):
        self.streams = tuple(self.streams)
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")
        if not self.beta1 >= self.beta2 >= 0:
            raise ConfigError("need beta1 >= beta2 >= 0")
        if self.kl_horizon is not None and self.kl_horizon < 1:
            raise ConfigError("kl_horizon must be >= 1")
        if self.group_size < 2:
            raise ConfigError("group_size must be >= 2")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.max_completion_tokens < 1:
            raise ConfigError("max_completion_tokens must be >= 1")
        if not 0 <= self.filter_low < self.filter_high <= 1:
            raise ConfigError("need 0 <= filter_low < filter_high <= 1")
        bad = set(self.streams) - set(STREAMS)
        if bad:
            raise ConfigError(f"unknown reward streams {sorted(bad)}")
        try:
            self.mapping
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def mapping(self) -> ScoreMapping:
        return ScoreMapping(self.judge_mapping, self.judge_tau)

    def horizon(self, total_steps: int) -> int:
        if self.kl_horizon is not None:
            return self.kl_horizon
        return max(1, total_steps // 2)

    def to_json(self) -> dict:
        out = asdict(self)
        out["streams"] = list(self.streams)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown train settings: {sorted(unknown)}")
        return cls(**obj)
