"""Exception hierarchy shared by every module.

Messages are stable strings: tests and downstream tooling match on them.
"""

from __future__ import annotations


class ValidationError(ValueError):
    """Base for every rejected input.

    ``kind`` is a short stable tag such as ``"length mismatch"``; ``line`` and
    ``field`` locate the offence inside a record file when known.
    """

    kind = "invalid input"

    def __init__(self, detail: str = "", *, line: int | None = None, field: str | None = None):
        self.detail = detail
        self.line = line
        self.field = field
        head = self.kind
        if line is not None:
            head += f" at line {line}"
        if field is not None:
            head += f", field {field}"
        super().__init__(f"{head}: {detail}" if detail else head)


class EmptyTraceError(ValidationError):
    kind = "empty trace"


class LengthMismatchError(ValidationError):
    kind = "length mismatch"


class NonFiniteLogprobError(ValidationError):
    kind = "non-finite logprob"


class PositiveLogprobError(ValidationError):
    kind = "positive logprob"


class RangeError(ValidationError):
    kind = "value out of range"


class DuplicateIdError(ValidationError):
    kind = "duplicate sample_id"


class SchemaVersionError(ValidationError):
    kind = "unknown schema_version"


class MalformedRecordError(ValidationError):
    kind = "malformed record"


class CoverageError(ValidationError):
    kind = "missing sample_ids"


class DegenerateLabelsError(ValidationError):
    """Raised when a metric needs both classes but sees only one."""

    kind = "degenerate labels"


class CapabilityError(RuntimeError):
    """The endpoint cannot return per-token logprobs for a supplied answer."""


class TaskFailure(RuntimeError):
    """One collection task failed at ``stage`` (generate, score_mm, score_text)."""

    def __init__(self, stage: str, reason: str):
        self.stage = stage
        self.reason = reason
        super().__init__(f"{stage}: {reason}")
