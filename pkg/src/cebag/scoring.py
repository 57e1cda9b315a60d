"""Log-probability based hallucination scores.

All inputs are natural-log per-token probabilities of one fixed response,
scored once with the image (``MULTIMODAL``) and once without (``TEXT_ONLY``).
Every detector is oriented so that a higher value means "more likely
hallucinated".

The token-level spread ``sigma`` uses the population divisor ``L``; a
single-token trace therefore has ``sigma == 0`` rather than an undefined
sample standard deviation.

Sums use :func:`math.fsum` and the spread is computed on values shifted by
their minimum, so every statistic here is independent of token order down to
the last bit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import (
    EmptyTraceError,
    LengthMismatchError,
    NonFiniteLogprobError,
    PositiveLogprobError,
    RangeError,
    ValidationError,
)


class Condition(str, enum.Enum):
    MULTIMODAL = "multimodal"
    TEXT_ONLY = "text_only"


def check_logprobs(logprobs: Sequence[float], name: str = "logprobs") -> None:
    """Raise unless every value is a finite float ``<= 0``."""
    for j, lp in enumerate(logprobs):
        if not math.isfinite(lp):
            raise NonFiniteLogprobError(f"{name}[{j}] = {lp!r}")
        if lp > 0.0:
            raise PositiveLogprobError(f"{name}[{j}] = {lp!r} > 0")


@dataclass(frozen=True)
class TokenTrace:
    tokens: tuple[str, ...]
    logprobs: tuple[float, ...]
    condition: Condition = Condition.MULTIMODAL

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "logprobs", tuple(float(x) for x in self.logprobs))
        object.__setattr__(self, "condition", Condition(self.condition))
        if not self.logprobs:
            raise EmptyTraceError("a trace needs at least one token")
        if len(self.tokens) != len(self.logprobs):
            raise LengthMismatchError(
                f"tokens has {len(self.tokens)}, logprobs has {len(self.logprobs)}"
            )
        check_logprobs(self.logprobs)

    def __len__(self) -> int:
        return len(self.logprobs)

    @classmethod
    def from_logprobs(cls, logprobs: Sequence[float], condition=Condition.MULTIMODAL) -> "TokenTrace":
        """Build a trace with empty display tokens."""
        return cls(("",) * len(logprobs), tuple(logprobs), condition)


@dataclass(frozen=True)
class SamplePair:
    """Two traces of the same response plus optional reference quality."""

    sample_id: str
    multimodal: TokenTrace
    text_only: TokenTrace
    green_score: float | None = None
    label: bool | None = None
    meta: Mapping[str, str] | None = field(default=None, compare=True)

    def __post_init__(self) -> None:
        if not isinstance(self.sample_id, str) or not self.sample_id:
            raise ValidationError("sample_id must be a non-empty string")
        if self.multimodal.condition is not Condition.MULTIMODAL:
            raise ValidationError("multimodal trace has the wrong condition")
        if self.text_only.condition is not Condition.TEXT_ONLY:
            raise ValidationError("text_only trace has the wrong condition")
        if len(self.multimodal) != len(self.text_only):
            raise LengthMismatchError(
                f"multimodal has {len(self.multimodal)} tokens, "
                f"text_only has {len(self.text_only)}"
            )
        if self.green_score is not None:
            g = float(self.green_score)
            if not (0.0 <= g <= 1.0):
                raise RangeError(f"green_score {self.green_score!r} not in [0, 1]")
            object.__setattr__(self, "green_score", g)
        if self.label is not None:
            object.__setattr__(self, "label", bool(self.label))

    @property
    def length(self) -> int:
        return len(self.multimodal)

    @classmethod
    def from_logprobs(
        cls,
        sample_id: str,
        mm: Sequence[float],
        text: Sequence[float],
        *,
        tokens: Sequence[str] | None = None,
        green_score: float | None = None,
        label: bool | None = None,
        meta: Mapping[str, str] | None = None,
    ) -> "SamplePair":
        if len(mm) != len(text):
            raise LengthMismatchError(f"multimodal has {len(mm)} tokens, text_only has {len(text)}")
        if tokens is None:
            tokens = ("",) * len(mm)
        return cls(
            sample_id,
            TokenTrace(tuple(tokens), tuple(mm), Condition.MULTIMODAL),
            TokenTrace(tuple(tokens), tuple(text), Condition.TEXT_ONLY),
            green_score=green_score,
            label=label,
            meta=meta,
        )


@dataclass(frozen=True)
class DetectorScores:
    sample_id: str
    sigma: float
    gain: float
    evidence: float
    cebag: float
    avgprob_neg: float
    length: int
    # Carried through from the corpus so a score file is self-sufficient for evaluation.
    green_score: float | None = None
    label: bool | None = None


def sequence_logprob(trace: TokenTrace) -> float:
    """Log-probability of the whole response: the sum of its token terms."""
    if len(trace) == 0:
        raise EmptyTraceError("a trace needs at least one token")
    return math.fsum(trace.logprobs)


def evidence_gain(pair: SamplePair) -> float:
    """Change in response log-probability caused by showing the image.

    Positive when the image makes the response more likely.
    """
    if len(pair.multimodal) != len(pair.text_only):
        raise LengthMismatchError(
            f"multimodal has {len(pair.multimodal)} tokens, text_only has {len(pair.text_only)}"
        )
    return sequence_logprob(pair.multimodal) - sequence_logprob(pair.text_only)


def evidence_magnitude(gain: float, length: int) -> float:
    if length < 1:
        raise ValidationError(f"length must be >= 1, got {length}")
    return abs(gain) / length


def token_variance(trace: TokenTrace) -> float:
    """Population standard deviation of the per-token log-probabilities."""
    xs = trace.logprobs
    n = len(xs)
    if n == 0:
        raise EmptyTraceError("a trace needs at least one token")
    lo = min(xs)
    d = [x - lo for x in xs]
    mean = math.fsum(d) / n
    return math.sqrt(math.fsum((v - mean) ** 2 for v in d) / n)


def cebag_score(sigma: float, evidence: float) -> float:
    return sigma * (1.0 + evidence)


def avgprob_score(trace: TokenTrace) -> float:
    """Negated mean token probability (so higher = more suspect)."""
    return -(math.fsum(math.exp(x) for x in trace.logprobs) / len(trace))


def score_sample(pair: SamplePair) -> DetectorScores:
    length = pair.length
    sigma = token_variance(pair.multimodal)
    gain = evidence_gain(pair)
    evidence = evidence_magnitude(gain, length)
    return DetectorScores(
        sample_id=pair.sample_id,
        sigma=sigma,
        gain=gain,
        evidence=evidence,
        cebag=cebag_score(sigma, evidence),
        avgprob_neg=avgprob_score(pair.multimodal),
        length=length,
        green_score=pair.green_score,
        label=pair.label,
    )


def _min_max(values: Sequence[float]) -> list[float]:
    lo, hi = min(values), max(values)
    span = hi - lo
    if span == 0.0:
        # zero range maps to zeros so lambda=0 stays equivalent to sigma-only
        return [0.0] * len(values)
    return [(v - lo) / span for v in values]


def cebag_lambda_scores(corpus: Sequence[DetectorScores], lam: float) -> list[tuple[str, float]]:
    """Tuned variant: min-max normalised sigma plus ``lam`` times normalised evidence."""
    if not corpus:
        raise ValidationError("cebag_lambda needs a non-empty corpus")
    if not (lam >= 0.0 and math.isfinite(lam)):
        raise RangeError(f"lambda must be finite and >= 0, got {lam!r}")
    sig = _min_max([s.sigma for s in corpus])
    ev = _min_max([s.evidence for s in corpus])
    return [(s.sample_id, a + lam * b) for s, a, b in zip(corpus, sig, ev)]


# Built-in detectors as attribute readers over DetectorScores.
DETECTORS = {
    "cebag": lambda s: s.cebag,
    "sigma_only": lambda s: s.sigma,
    "evidence_only": lambda s: s.evidence,
    "avgprob": lambda s: s.avgprob_neg,
}

DEFAULT_LAMBDA_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.5, 2.0, 3.0, 5.0, 10.0)
