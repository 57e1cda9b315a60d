"""Line-delimited JSON corpora of paired traces and detector scores.

One record per line, fields in a fixed order, floats in Python's shortest
round-trip ``repr``. Reading validates everything: a record that would break
a scoring invariant never leaves this module, and every rejection names the
offending line and field.

Corpus record (``schema_version`` 1)::

    {"schema_version":1,"sample_id":"q1","tokens":["Yes"],
     "logprobs_mm":[-0.01],"logprobs_text":[-0.7],
     "green_score":1.0,"label":false,"meta":{"model":"m"}}
"""

from __future__ import annotations

import io
import json
import math
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

from .errors import (
    DuplicateIdError,
    LengthMismatchError,
    MalformedRecordError,
    NonFiniteLogprobError,
    PositiveLogprobError,
    RangeError,
    SchemaVersionError,
    ValidationError,
)
from .scoring import Condition, DetectorScores, SamplePair, TokenTrace

SCHEMA_VERSION = 1
SUPPORTED_VERSIONS = frozenset({1})

CORPUS_FIELDS = (
    "schema_version", "sample_id", "tokens", "logprobs_mm", "logprobs_text",
    "green_score", "label", "meta",
)
SCORE_FIELDS = (
    "schema_version", "sample_id", "length", "sigma", "gain", "evidence",
    "cebag", "avgprob_neg", "green_score", "label",
)


def _reject_constant(name: str):
    raise NonFiniteLogprobError(f"JSON constant {name} is not allowed")


def _dumps(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=True, allow_nan=False, separators=(",", ":"))


def _lines(source: IO) -> Iterator[tuple[int, str]]:
    for lineno, raw in enumerate(source, start=1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise MalformedRecordError(f"not UTF-8 ({exc})", line=lineno) from None
        if raw.strip():
            yield lineno, raw


def _parse(lineno: int, raw: str) -> dict:
    try:
        obj = json.loads(raw, parse_constant=_reject_constant)
    except NonFiniteLogprobError as exc:
        raise NonFiniteLogprobError(exc.detail, line=lineno) from None
    except json.JSONDecodeError as exc:
        raise MalformedRecordError(f"invalid JSON ({exc.msg})", line=lineno) from None
    if not isinstance(obj, dict):
        raise MalformedRecordError("record is not a JSON object", line=lineno)
    version = obj.get("schema_version")
    if type(version) is not int or version not in SUPPORTED_VERSIONS:
        raise SchemaVersionError(f"got {version!r}", line=lineno, field="schema_version")
    return obj


def _number(value, lineno: int, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedRecordError(f"expected a number, got {value!r}", line=lineno, field=field)
    x = float(value)
    if not math.isfinite(x):
        raise NonFiniteLogprobError(f"{value!r}", line=lineno, field=field)
    return x


def _logprobs(obj: dict, key: str, lineno: int) -> tuple[float, ...]:
    values = obj.get(key)
    if not isinstance(values, list):
        raise MalformedRecordError("expected a list of numbers", line=lineno, field=key)
    out = []
    for j, v in enumerate(values):
        x = _number(v, lineno, f"{key}[{j}]")
        if x > 0.0:
            raise PositiveLogprobError(f"{x!r} > 0", line=lineno, field=f"{key}[{j}]")
        out.append(x)
    return tuple(out)


def _optional_green(obj: dict, lineno: int) -> float | None:
    g = obj.get("green_score")
    if g is None:
        return None
    x = _number(g, lineno, "green_score")
    if not (0.0 <= x <= 1.0):
        raise RangeError(f"{x!r} not in [0, 1]", line=lineno, field="green_score")
    return x


def _optional_label(obj: dict, lineno: int) -> bool | None:
    lab = obj.get("label")
    if lab is not None and not isinstance(lab, bool):
        raise MalformedRecordError(f"expected true/false/null, got {lab!r}", line=lineno, field="label")
    return lab


def _sample_id(obj: dict, lineno: int) -> str:
    sid = obj.get("sample_id")
    if not isinstance(sid, str) or not sid:
        raise MalformedRecordError(f"expected a non-empty string, got {sid!r}", line=lineno, field="sample_id")
    return sid


def parse_record(obj: dict, lineno: int) -> SamplePair:
    sid = _sample_id(obj, lineno)
    tokens = obj.get("tokens")
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise MalformedRecordError("expected a list of strings", line=lineno, field="tokens")
    mm = _logprobs(obj, "logprobs_mm", lineno)
    text = _logprobs(obj, "logprobs_text", lineno)
    if not (len(tokens) == len(mm) == len(text)):
        raise LengthMismatchError(
            f"tokens={len(tokens)} logprobs_mm={len(mm)} logprobs_text={len(text)}",
            line=lineno,
            field="logprobs_text" if len(tokens) == len(mm) else "logprobs_mm",
        )
    if not mm:
        raise MalformedRecordError("a record needs at least one token", line=lineno, field="tokens")
    meta = obj.get("meta")
    if meta is not None:
        if not isinstance(meta, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in meta.items()
        ):
            raise MalformedRecordError("expected a string-to-string map", line=lineno, field="meta")
    return SamplePair(
        sid,
        TokenTrace(tuple(tokens), mm, Condition.MULTIMODAL),
        TokenTrace(tuple(tokens), text, Condition.TEXT_ONLY),
        green_score=_optional_green(obj, lineno),
        label=_optional_label(obj, lineno),
        meta=meta,
    )


def read_corpus(source: IO) -> list[SamplePair]:
    """Read and validate a corpus stream (bytes or text) in file order."""
    pairs = []
    seen: dict[str, int] = {}
    for lineno, raw in _lines(source):
        pair = parse_record(_parse(lineno, raw), lineno)
        if pair.sample_id in seen:
            raise DuplicateIdError(
                f"{pair.sample_id!r} first seen at line {seen[pair.sample_id]}",
                line=lineno,
                field="sample_id",
            )
        seen[pair.sample_id] = lineno
        pairs.append(pair)
    return pairs


def format_record(pair: SamplePair) -> str:
    """Canonical one-line serialisation of a pair (no trailing newline)."""
    return _dumps({
        "schema_version": SCHEMA_VERSION,
        "sample_id": pair.sample_id,
        "tokens": list(pair.multimodal.tokens),
        "logprobs_mm": list(pair.multimodal.logprobs),
        "logprobs_text": list(pair.text_only.logprobs),
        "green_score": pair.green_score,
        "label": pair.label,
        "meta": None if pair.meta is None else dict(sorted(pair.meta.items())),
    })


def _write_lines(lines: Iterable[str], sink: IO) -> None:
    binary = not isinstance(sink, io.TextIOBase)
    for line in lines:
        line += "\n"
        sink.write(line.encode("utf-8") if binary else line)


def write_corpus(pairs: Sequence[SamplePair], sink: IO) -> None:
    _write_lines((format_record(p) for p in pairs), sink)


def format_scores(s: DetectorScores) -> str:
    return _dumps({
        "schema_version": SCHEMA_VERSION,
        "sample_id": s.sample_id,
        "length": s.length,
        "sigma": s.sigma,
        "gain": s.gain,
        "evidence": s.evidence,
        "cebag": s.cebag,
        "avgprob_neg": s.avgprob_neg,
        "green_score": s.green_score,
        "label": s.label,
    })


def write_scores(scores: Sequence[DetectorScores], sink: IO) -> None:
    _write_lines((format_scores(s) for s in scores), sink)


def read_scores(source: IO) -> list[DetectorScores]:
    out = []
    seen: set[str] = set()
    for lineno, raw in _lines(source):
        obj = _parse(lineno, raw)
        sid = _sample_id(obj, lineno)
        if sid in seen:
            raise DuplicateIdError(repr(sid), line=lineno, field="sample_id")
        seen.add(sid)
        length = obj.get("length")
        if type(length) is not int or length < 1:
            raise MalformedRecordError(f"expected a positive integer, got {length!r}", line=lineno, field="length")
        nums = {k: _number(obj.get(k), lineno, k) for k in ("sigma", "gain", "evidence", "cebag", "avgprob_neg")}
        out.append(DetectorScores(
            sample_id=sid,
            length=length,
            green_score=_optional_green(obj, lineno),
            label=_optional_label(obj, lineno),
            **nums,
        ))
    return out


def read_external_scores(source: IO) -> list[tuple[str, float]]:
    """Externally computed detector scores: ``{"sample_id": ..., "score": ...}`` per line."""
    out = []
    seen: set[str] = set()
    for lineno, raw in _lines(source):
        try:
            obj = json.loads(raw, parse_constant=_reject_constant)
        except (json.JSONDecodeError, ValidationError):
            raise MalformedRecordError("invalid JSON", line=lineno) from None
        if not isinstance(obj, dict):
            raise MalformedRecordError("record is not a JSON object", line=lineno)
        sid = _sample_id(obj, lineno)
        if sid in seen:
            raise DuplicateIdError(repr(sid), line=lineno, field="sample_id")
        seen.add(sid)
        out.append((sid, _number(obj.get("score"), lineno, "score")))
    return out


def sniff_kind(path: Path) -> str:
    """``"corpus"`` or ``"scores"`` judged from the first non-blank record."""
    with open(path, "rb") as fh:
        for lineno, raw in _lines(fh):
            obj = _parse(lineno, raw)
            if "logprobs_mm" in obj:
                return "corpus"
            if "cebag" in obj:
                return "scores"
            raise MalformedRecordError("neither a corpus nor a score record", line=lineno)
    return "corpus"


def load_corpus(path) -> list[SamplePair]:
    with open(path, "rb") as fh:
        return read_corpus(fh)


def save_corpus(pairs: Sequence[SamplePair], path) -> None:
    with open(path, "wb") as fh:
        write_corpus(pairs, fh)


def load_scores(path) -> list[DetectorScores]:
    with open(path, "rb") as fh:
        return read_scores(fh)


def save_scores(scores: Sequence[DetectorScores], path) -> None:
    with open(path, "wb") as fh:
        write_scores(scores, fh)
