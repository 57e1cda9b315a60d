"""Collect paired traces from a chat-completions endpoint.

Each task costs exactly three requests, all to ``{base_url}/chat/completions``:

1. generation: question plus image, ``temperature=0.1``;
2. scoring with the image: the answer supplied as the assistant turn, with
   ``echo``/``logprobs`` asking for its per-token log-probabilities;
3. the same scoring request with the image part removed from the payload.

The scoring response must carry ``choices[0].logprobs.content`` as a list of
``{"token": str, "logprob": float}`` covering the supplied answer.

Bodies are logged as SHA-256 digests unless ``log_bodies`` is set.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import mimetypes
import os
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence
from urllib.parse import urlparse

import httpx

from .errors import CapabilityError, TaskFailure, ValidationError
from .scoring import Condition, SamplePair, TokenTrace, check_logprobs
from .traceio import format_record, load_corpus

log = logging.getLogger(__name__)

API_KEY_ENV = "CEBAG_API_KEY"
GENERATION_TEMPERATURE = 0.1
PROBE_QUESTION = "cebag capability probe"
PROBE_ANSWER = "ok"
CAPABILITY_HINT = (
    "the endpoint must return choices[0].logprobs.content for the supplied assistant "
    "message (request fields: echo=true, logprobs=true, max_tokens=0, "
    "continue_final_message=true); for vLLM use a build that supports prompt "
    "logprobs on chat completions"
)
RETRYABLE_STATUS = frozenset({408, 425, 429, 500, 502, 503, 504})


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    api_key: str | None = field(default=None, repr=False)
    timeout: float = 120.0
    max_in_flight: int = 4
    retry_budget: int = 2
    log_bodies: bool = False

    def __post_init__(self) -> None:
        parsed = urlparse(self.base_url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ValidationError(f"base_url must be an absolute http(s) URL, got {self.base_url!r}")
        if self.max_in_flight < 1:
            raise ValidationError("max_in_flight must be >= 1")
        if self.retry_budget < 0:
            raise ValidationError("retry_budget must be >= 0")
        if self.timeout <= 0:
            raise ValidationError("timeout must be > 0")

    @property
    def completions_url(self) -> str:
        return self.base_url.rstrip("/") + "/chat/completions"


def resolve_api_key(credentials_path: str | os.PathLike | None = None) -> str | None:
    """API key from ``$CEBAG_API_KEY``, else from a JSON credentials file ``{"api_key": ...}``."""
    key = os.environ.get(API_KEY_ENV)
    if key:
        return key
    if credentials_path is not None:
        with open(credentials_path, encoding="utf-8") as fh:
            data = json.load(fh)
        key = data.get("api_key") if isinstance(data, dict) else None
        if key is not None and not isinstance(key, str):
            raise ValidationError("credentials file: api_key must be a string")
        return key
    return None


@dataclass(frozen=True)
class VqaTask:
    sample_id: str
    question: str
    image_ref: str
    green_score: float | None = None


def load_tasks(path) -> list[VqaTask]:
    """Tasks file: one ``{"sample_id", "question", "image_ref", "green_score"?}`` object per line."""
    tasks = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                task = VqaTask(
                    sample_id=str(obj["sample_id"]),
                    question=str(obj["question"]),
                    image_ref=str(obj["image_ref"]),
                    green_score=None if obj.get("green_score") is None else float(obj["green_score"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"bad task ({exc})", line=lineno) from None
            if task.sample_id in seen:
                raise ValidationError(f"duplicate sample_id {task.sample_id!r}", line=lineno)
            seen.add(task.sample_id)
            tasks.append(task)
    return tasks


def image_url(image_ref: str, base_dir: Path | None = None) -> str:
    """URL for the image part: remote/data URLs pass through, files become data URIs."""
    if image_ref.startswith(("http://", "https://", "data:")):
        return image_ref
    path = Path(image_ref)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    mime = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
    payload = base64.b64encode(path.read_bytes()).decode("ascii")
    return f"data:{mime};base64,{payload}"


def _user_message(question: str, image: str | None) -> dict:
    if image is None:
        return {"role": "user", "content": [{"type": "text", "text": question}]}
    return {
        "role": "user",
        "content": [
            {"type": "image_url", "image_url": {"url": image}},
            {"type": "text", "text": question},
        ],
    }


class EndpointClient:
    """Thread-safe client for one endpoint; share a single instance across workers."""

    def __init__(self, cfg: EndpointConfig, *, transport: httpx.BaseTransport | None = None,
                 base_dir: Path | None = None):
        self.cfg = cfg
        self.base_dir = base_dir
        headers = {"Content-Type": "application/json"}
        if cfg.api_key:
            headers["Authorization"] = f"Bearer {cfg.api_key}"
        self._http = httpx.Client(
            headers=headers,
            timeout=cfg.timeout,
            transport=transport,
            limits=httpx.Limits(max_connections=cfg.max_in_flight),
        )
        self._lock = threading.Lock()
        self.requests_sent = 0

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _post(self, payload: dict, what: str) -> dict:
        body = json.dumps(payload, ensure_ascii=True, separators=(",", ":")).encode("utf-8")
        digest = hashlib.sha256(body).hexdigest()
        attempts = self.cfg.retry_budget + 1
        last = "no attempt made"
        for attempt in range(1, attempts + 1):
            with self._lock:
                self.requests_sent += 1
            if self.cfg.log_bodies:
                log.info("POST %s %s attempt=%d body=%s", what, self.cfg.completions_url, attempt, body.decode())
            else:
                log.info("POST %s %s attempt=%d sha256=%s", what, self.cfg.completions_url, attempt, digest)
            try:
                resp = self._http.post(self.cfg.completions_url, content=body)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
                log.warning("%s attempt %d failed: %s", what, attempt, last)
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last = f"HTTP {resp.status_code}"
                log.warning("%s attempt %d failed: %s", what, attempt, last)
                continue
            if resp.status_code >= 400:
                raise RuntimeError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if self.cfg.log_bodies:
                log.info("response %s body=%s", what, resp.text)
            else:
                log.info("response %s sha256=%s", what, hashlib.sha256(resp.content).hexdigest())
            try:
                return resp.json()
            except ValueError:
                raise RuntimeError("response is not JSON") from None
        raise RuntimeError(f"gave up after {attempts} attempt(s): {last}")

    def generate_answer(self, task: VqaTask) -> str:
        try:
            image = image_url(task.image_ref, self.base_dir)
        except OSError as exc:
            raise TaskFailure("generate", f"cannot read image {task.image_ref!r}: {exc}") from None
        payload = {
            "model": self.cfg.model_name,
            "messages": [_user_message(task.question, image)],
            "temperature": GENERATION_TEMPERATURE,
            "n": 1,
        }
        try:
            data = self._post(payload, f"generate[{task.sample_id}]")
            text = data["choices"][0]["message"]["content"]
        except RuntimeError as exc:
            raise TaskFailure("generate", str(exc)) from None
        except (KeyError, IndexError, TypeError):
            raise TaskFailure("generate", "response has no choices[0].message.content") from None
        if not isinstance(text, str) or not text.strip():
            raise TaskFailure("generate", "empty answer")
        return text

    def _score_payload(self, question: str, answer: str, image: str | None) -> dict:
        return {
            "model": self.cfg.model_name,
            "messages": [
                _user_message(question, image),
                {"role": "assistant", "content": answer},
            ],
            "echo": True,
            "logprobs": True,
            "max_tokens": 0,
            "add_generation_prompt": False,
            "continue_final_message": True,
        }

    @staticmethod
    def _parse_logprobs(data: dict) -> tuple[list[str], list[float]]:
        try:
            content = data["choices"][0]["logprobs"]["content"]
        except (KeyError, IndexError, TypeError):
            content = None
        if not isinstance(content, list) or not content:
            raise CapabilityError(f"endpoint returned no per-token logprobs; {CAPABILITY_HINT}")
        tokens, lps = [], []
        for entry in content:
            try:
                tokens.append(str(entry["token"]))
                lps.append(float(entry["logprob"]))
            except (KeyError, TypeError, ValueError):
                raise CapabilityError(f"malformed logprob entry {entry!r}; {CAPABILITY_HINT}") from None
        return tokens, lps

    def score_pass(self, task: VqaTask, answer: str, with_image: bool) -> TokenTrace:
        stage = "score_mm" if with_image else "score_text"
        if not answer:
            raise TaskFailure(stage, "empty answer")
        image = None
        if with_image:
            try:
                image = image_url(task.image_ref, self.base_dir)
            except OSError as exc:
                raise TaskFailure(stage, f"cannot read image {task.image_ref!r}: {exc}") from None
        try:
            data = self._post(self._score_payload(task.question, answer, image), f"{stage}[{task.sample_id}]")
        except RuntimeError as exc:
            raise TaskFailure(stage, str(exc)) from None
        tokens, lps = self._parse_logprobs(data)
        try:
            check_logprobs(lps)
        except ValidationError as exc:
            raise TaskFailure(stage, str(exc)) from None
        return TokenTrace(tuple(tokens), tuple(lps),
                          Condition.MULTIMODAL if with_image else Condition.TEXT_ONLY)

    def probe(self) -> None:
        """Raise :class:`CapabilityError` unless a text-only scoring request returns logprobs."""
        try:
            data = self._post(self._score_payload(PROBE_QUESTION, PROBE_ANSWER, None), "probe")
        except RuntimeError as exc:
            raise CapabilityError(f"probe request failed ({exc}); {CAPABILITY_HINT}") from None
        self._parse_logprobs(data)

    def collect_pair(self, task: VqaTask) -> SamplePair:
        answer = self.generate_answer(task)
        try:
            mm = self.score_pass(task, answer, with_image=True)
        except CapabilityError as exc:
            raise TaskFailure("score_mm", str(exc)) from None
        try:
            text = self.score_pass(task, answer, with_image=False)
        except CapabilityError as exc:
            raise TaskFailure("score_text", str(exc)) from None
        if len(mm) != len(text):
            raise TaskFailure(
                "score_text", f"length mismatch score_mm={len(mm)}/score_text={len(text)}"
            )
        meta = {
            "model": self.cfg.model_name,
            "decoding": "greedy",
            "temperature": str(GENERATION_TEMPERATURE),
        }
        if mm.tokens != text.tokens:
            meta["token_strings_differ"] = "true"
        try:
            return SamplePair(
                task.sample_id,
                mm,
                TokenTrace(mm.tokens, text.logprobs, Condition.TEXT_ONLY),
                green_score=task.green_score,
                meta=meta,
            )
        except ValidationError as exc:
            raise TaskFailure("score_text", str(exc)) from None


@dataclass
class CollectionSummary:
    succeeded: int = 0
    failed: int = 0
    skipped: int = 0
    failures: list[dict] = field(default_factory=list)


def collect_batch(
    tasks: Sequence[VqaTask],
    client: EndpointClient,
    out_path,
    *,
    resume: bool = False,
    progress: Callable[[str], None] | None = None,
) -> CollectionSummary:
    """Run every task, appending finished records to ``out_path`` as they complete.

    Up to ``max_in_flight`` tasks run at once, each issuing its three requests
    in order. A failed task never stops the batch; failures are returned and
    written to ``<out_path>.failures.jsonl``. With ``resume`` the ids already
    in ``out_path`` are skipped.
    """
    out_path = Path(out_path)
    summary = CollectionSummary()
    done: set[str] = set()
    if resume and out_path.exists():
        done = {p.sample_id for p in load_corpus(out_path)}
    todo = [t for t in tasks if t.sample_id not in done]
    summary.skipped = len(tasks) - len(todo)

    mode = "a" if resume else "w"
    total = len(todo)
    with open(out_path, mode, encoding="utf-8") as sink, \
            ThreadPoolExecutor(max_workers=client.cfg.max_in_flight) as pool:
        futures = {pool.submit(client.collect_pair, t): t for t in todo}
        for n, fut in enumerate(as_completed(futures), start=1):
            task = futures[fut]
            try:
                pair = fut.result()
            except TaskFailure as exc:
                summary.failed += 1
                summary.failures.append({"sample_id": task.sample_id, "stage": exc.stage, "reason": exc.reason})
                if progress:
                    progress(f"[{n}/{total}] {task.sample_id} FAILED at {exc.stage}: {exc.reason}")
                continue
            except Exception as exc:  # never batch-fatal
                summary.failed += 1
                summary.failures.append({"sample_id": task.sample_id, "stage": "internal", "reason": repr(exc)})
                if progress:
                    progress(f"[{n}/{total}] {task.sample_id} FAILED: {exc!r}")
                continue
            # single writer: only this thread touches the sink
            sink.write(format_record(pair) + "\n")
            sink.flush()
            summary.succeeded += 1
            if progress:
                progress(f"[{n}/{total}] {task.sample_id} ok")

    failures_path = out_path.with_name(out_path.name + ".failures.jsonl")
    if summary.failures:
        with open(failures_path, "w", encoding="utf-8") as fh:
            for rec in sorted(summary.failures, key=lambda r: r["sample_id"]):
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    elif failures_path.exists():
        failures_path.unlink()
    return summary
