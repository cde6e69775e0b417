"""Shared test fixtures: a local chat-completions stub server."""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class StubChatServer:
    """Tiny OpenAI-style /chat/completions stub with scriptable behavior.

    `script` is a callable (request_body: dict, request_index: int) -> response.
    A response may be a dict (sent as JSON with status 200), an int (sent as an
    empty error status), a float (seconds to sleep before answering "ok"), or
    raw bytes (sent verbatim with status 200).
    """

    def __init__(self, script):
        self.script = script
        self.request_count = 0
        self.started_at = time.monotonic()
        lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                with lock:
                    index = stub.request_count
                    stub.request_count += 1
                outcome = stub.script(body, index)
                if isinstance(outcome, float):
                    time.sleep(outcome)
                    outcome = stub.ok("ok")
                if isinstance(outcome, int):
                    self.send_response(outcome)
                    self.end_headers()
                    return
                if isinstance(outcome, bytes):
                    payload = outcome
                else:
                    payload = json.dumps(outcome).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @staticmethod
    def ok(text: str, completion_tokens: int | None = None, prompt_tokens: int | None = None):
        response = {"choices": [{"message": {"role": "assistant", "content": text}}]}
        usage = {}
        if completion_tokens is not None:
            usage["completion_tokens"] = completion_tokens
        if prompt_tokens is not None:
            usage["prompt_tokens"] = prompt_tokens
        if usage:
            response["usage"] = usage
        return response

    @property
    def url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def stub_server():
    """Factory fixture: stub_server(script) -> running StubChatServer."""
    servers = []

    def factory(script):
        server = StubChatServer(script)
        server.__enter__()
        servers.append(server)
        return server

    yield factory
    for server in servers:
        server.__exit__()
