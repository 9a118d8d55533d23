"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CtxGrpoError(Exception):
    """Base class for every error raised by ctxgrpo."""


# --- response format -------------------------------------------------------

class FormatError(CtxGrpoError):
    """A response does not follow the context/think/answer layout."""


class MissingTag(FormatError):
    def __init__(self, name: str):
        super().__init__(f"missing <{name}> block")
        self.name = name


class DuplicateTag(FormatError):
    def __init__(self, name: str):
        super().__init__(f"<{name}> occurs more than once")
        self.name = name


class UnclosedTag(FormatError):
    def __init__(self, name: str):
        super().__init__(f"<{name}> is not properly opened and closed")
        self.name = name


class OrderViolation(FormatError):
    def __init__(self, message: str = "blocks must appear as context, think, answer"):
        super().__init__(message)


class StrayContent(FormatError):
    def __init__(self, position: int):
        super().__init__(f"non-whitespace text outside tag blocks at char {position}")
        self.position = position


class OffsetMismatch(CtxGrpoError):
    """Token character offsets do not partition the response."""


# --- rewards / judge -------------------------------------------------------

class EmptyReference(CtxGrpoError):
    """WER is undefined for an empty reference."""


class JudgeError(CtxGrpoError):
    pass


class JudgeUnavailable(JudgeError):
    """The judge backend failed after all retries."""


class MalformedJudgeReply(JudgeError):
    """The judge replied with something that is not an integer score in [0, 5]."""


# --- optimizer -------------------------------------------------------------

class GroupTooSmall(CtxGrpoError):
    pass


class MissingStream(CtxGrpoError):
    pass


class ShapeMismatch(CtxGrpoError):
    pass


class UnknownToken(CtxGrpoError):
    pass


# --- data / config ---------------------------------------------------------

class ConfigError(CtxGrpoError):
    pass


class UnknownStage(ConfigError):
    def __init__(self, stage: str):
        super().__init__(f"unknown RL stage {stage!r}; expected rl_stage1 or rl_stage2")
        self.stage = stage


class DataError(CtxGrpoError):
    pass


class SchemaError(DataError):
    def __init__(self, line: int | None, field: str, message: str):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{field}: {message}")
        self.line = line
        self.field = field


class DuplicateId(DataError):
    def __init__(self, record_id: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"duplicate record id {record_id!r}{where}")
        self.record_id = record_id
        self.line = line


class MissingPrediction(DataError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(f"no prediction for ids: {', '.join(self.ids)}")


class UnknownId(DataError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(f"predictions reference unknown ids: {', '.join(self.ids)}")
