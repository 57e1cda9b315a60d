import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from cebag.collector import PROBE_QUESTION


def _token_logprob(token: str, with_image: bool) -> float:
    base = -0.05 - (sum(map(ord, token)) % 17) / 10.0
    return base if with_image else base - 0.4


class MockEndpoint:
    """Scriptable stand-in for a chat-completions server with teacher-forced logprobs.

    Answers are tokenised on whitespace. ``fail`` maps a request kind
    (generate, score_mm, score_text) to a number of leading requests of that
    kind answered with 503; ``stall`` does the same but sleeps ``stall_seconds``
    first so the client times out.
    """

    def __init__(self):
        self.answer = "the lesion is in the left temporal lobe"
        self.logprobs_supported = True
        self.text_token_delta = 0
        self.fail = {}
        self.stall = {}
        self.stall_seconds = 0.5
        self.delay = 0.0
        self.requests = []  # (kind, raw body bytes)
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()
        self._seen = {}

        owner = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                raw = self.rfile.read(int(self.headers.get("Content-Length", 0)))
                owner._handle(self, raw)

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.server.daemon_threads = True
        self.thread = threading.Thread(target=self.server.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True)

    @property
    def base_url(self):
        return f"http://127.0.0.1:{self.server.server_address[1]}/v1"

    def start(self):
        self.thread.start()
        return self

    def stop(self):
        self.server.shutdown()
        self.server.server_close()

    def kinds(self):
        return [k for k, _ in self.requests]

    def task_requests(self):
        return [(k, b) for k, b in self.requests if k != "probe"]

    @staticmethod
    def classify(body: dict) -> str:
        user = body["messages"][0]["content"]
        texts = [part.get("text") for part in user if part.get("type") == "text"]
        has_image = any(part.get("type") == "image_url" for part in user)
        if not body.get("echo"):
            return "generate"
        if PROBE_QUESTION in texts:
            return "probe"
        return "score_mm" if has_image else "score_text"

    def _send(self, handler, status, payload):
        data = json.dumps(payload).encode()
        try:
            handler.send_response(status)
            handler.send_header("Content-Type", "application/json")
            handler.send_header("Content-Length", str(len(data)))
            handler.end_headers()
            handler.wfile.write(data)
        except (BrokenPipeError, ConnectionResetError):
            pass

    def _handle(self, handler, raw):
        body = json.loads(raw)
        kind = self.classify(body)
        with self._lock:
            self.requests.append((kind, raw))
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
            n = self._seen.get(kind, 0)
            self._seen[kind] = n + 1
        try:
            if self.delay:
                time.sleep(self.delay)
            if n < self.stall.get(kind, 0):
                time.sleep(self.stall_seconds)
                self._send(handler, 503, {"error": "stalled"})
                return
            if n < self.fail.get(kind, 0):
                self._send(handler, 503, {"error": "scripted failure"})
                return
            if kind == "generate":
                self._send(handler, 200, {"choices": [{"message": {"role": "assistant", "content": self.answer}}]})
                return
            answer = body["messages"][1]["content"]
            tokens = answer.split()
            if kind == "score_text" and self.text_token_delta:
                tokens = tokens[: len(tokens) + self.text_token_delta]
            choice = {"message": {"role": "assistant", "content": ""}}
            if self.logprobs_supported:
                with_image = kind == "score_mm"
                choice["logprobs"] = {
                    "content": [{"token": t, "logprob": _token_logprob(t, with_image)} for t in tokens]
                }
            self._send(handler, 200, {"choices": [choice]})
        finally:
            with self._lock:
                self.in_flight -= 1


@pytest.fixture
def mock_endpoint():
    ep = MockEndpoint().start()
    yield ep
    ep.stop()


@pytest.fixture
def image_file(tmp_path):
    # bytes chosen so their base64 form is easy to search for in request bodies
    path = tmp_path / "scan.png"
    path.write_bytes(b"\x89PNG\r\n\x1a\nFAKE-IMAGE-PAYLOAD" * 4)
    return path


@pytest.fixture
def tasks_file(tmp_path, image_file):
    def make(n, green=0.5):
        path = tmp_path / "tasks.jsonl"
        with open(path, "w") as fh:
            for i in range(n):
                fh.write(json.dumps({
                    "sample_id": f"t{i:02d}",
                    "question": f"What is abnormal in image {i}?",
                    "image_ref": image_file.name,
                    "green_score": green,
                }) + "\n")
        return path

    return make


_acceptance = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.outcome != "passed":
        _acceptance[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        status = "PASS" if _acceptance[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")
