"""In-process OpenAI-compatible stub server for offline HTTP-backend runs.

Implements the chat-completions and embeddings surfaces with
deterministic replies, keeps a timestamped request log so retry and
backoff behavior is observable, and supports scripted failures.
Intended for tests and demos; binds an ephemeral localhost port.
"""

from __future__ import annotations

import json
import re
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .backends.synthetic import HashEmbedder, tokenize

_ANSWER_LINE_RE = re.compile(r"^Answer:\s*(.+)$", re.MULTILINE)
_QUESTION_LINE_RE = re.compile(r"^Question:\s*(.+)$", re.MULTILINE)


def _default_chat_responder(prompt: str) -> str:
    """Deterministic stand-ins for the three prompt shapes."""
    if "Rate the logical coherence" in prompt:
        return "8"
    if "chair a deliberation panel" in prompt:
        answers = [a.strip() for a in _ANSWER_LINE_RE.findall(prompt)] or ["unknown"]
        counts: dict[str, int] = {}
        for a in answers:
            counts[a] = counts.get(a, 0) + 1
        best = max(counts.values())
        modal = min(a for a, c in counts.items() if c == best)
        return f"The panel agrees after review.\nAnswer: {modal}"
    m = _QUESTION_LINE_RE.search(prompt)
    question = m.group(1) if m else prompt
    tokens = tokenize(question) or ["unknown"]
    # Longest token, ties lexicographic: stable and question-dependent.
    pick = sorted(tokens, key=lambda t: (-len(t), t))[0]
    return f"Stub reasoning about the question.\nAnswer: {pick}"


class OpenAIStubServer:
    """Threaded stub endpoint with a request log and failure injection."""

    def __init__(self, dim: int = 64, latency: float = 0.0):
        self._embedder = HashEmbedder(dim)
        self._latency = latency
        self._lock = threading.Lock()
        self._log: list[dict] = []
        self._failures: list[int] = []  # status codes to serve, FIFO
        self._garbage_remaining = 0
        self._chat_responder = _default_chat_responder
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "OpenAIStubServer":
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # quiet
                pass

            def do_POST(self):
                stub._handle(self)

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    def __enter__(self) -> "OpenAIStubServer":
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    # -- scripting ---------------------------------------------------------

    def fail_next(self, count: int, status: int = 500):
        """Serve the given status for the next `count` requests."""
        with self._lock:
            self._failures.extend([status] * count)

    def garbage_next(self, count: int):
        """Serve invalid JSON bodies for the next `count` requests."""
        with self._lock:
            self._garbage_remaining += count

    def set_chat_responder(self, responder):
        """Override the chat reply function (prompt -> content string)."""
        self._chat_responder = responder

    @property
    def request_log(self) -> list[dict]:
        with self._lock:
            return [dict(entry) for entry in self._log]

    # -- request handling ----------------------------------------------------

    def _handle(self, handler: BaseHTTPRequestHandler):
        length = int(handler.headers.get("Content-Length", "0"))
        body = handler.rfile.read(length).decode("utf-8") if length else ""
        try:
            payload = json.loads(body) if body else {}
        except json.JSONDecodeError:
            payload = {}
        with self._lock:
            forced_status = self._failures.pop(0) if self._failures else None
            garbage = False
            if forced_status is None and self._garbage_remaining > 0:
                self._garbage_remaining -= 1
                garbage = True
            entry = {
                "time": time.monotonic(),
                "path": handler.path,
                "payload": payload,
                "authorization": handler.headers.get("Authorization"),
                "status": forced_status or 200,
            }
            self._log.append(entry)
        if self._latency:
            time.sleep(self._latency)
        if forced_status is not None:
            handler.send_response(forced_status)
            handler.end_headers()
            handler.wfile.write(b"scripted failure")
            return
        if garbage:
            self._respond_raw(handler, b"{not json at all")
            return
        if handler.path.endswith("/embeddings"):
            text = payload.get("input", "")
            if isinstance(text, list):
                text = text[0] if text else ""
            vector = self._embedder.embed(text if text else "empty")
            reply = {
                "object": "list",
                "model": payload.get("model", "stub"),
                "data": [{"object": "embedding", "index": 0, "embedding": [float(v) for v in vector]}],
            }
        else:
            messages = payload.get("messages", [])
            prompt = messages[-1].get("content", "") if messages else ""
            reply = {
                "object": "chat.completion",
                "model": payload.get("model", "stub"),
                "choices": [
                    {
                        "index": 0,
                        "message": {"role": "assistant", "content": self._chat_responder(prompt)},
                        "finish_reason": "stop",
                    }
                ],
            }
        self._respond_raw(handler, json.dumps(reply).encode("utf-8"))

    @staticmethod
    def _respond_raw(handler: BaseHTTPRequestHandler, body: bytes):
        handler.send_response(200)
        handler.send_header("Content-Type", "application/json")
        handler.send_header("Content-Length", str(len(body)))
        handler.end_headers()
        handler.wfile.write(body)
