"""Chat-completions-shaped HTTP server over a trained checkpoint.

Speaks the same JSON the attack toolkit's gateway sends, so a trained
checkpoint can sit behind any model id in its endpoint config. Requests
are stateless; a lock serializes model forward passes so concurrent
requests cannot interleave inference state. Decoding is greedy unless the
request carries a positive temperature.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import torch

from .train import load_checkpoint

_VALID_ROLES = ("system", "user", "assistant")


def validate_request(payload) -> str | None:
    """Return an error message for a malformed chat request, else None."""
    if not isinstance(payload, dict):
        return "request body must be a JSON object"
    if not isinstance(payload.get("model"), str):
        return "model must be a string"
    messages = payload.get("messages")
    if not isinstance(messages, list) or not messages:
        return "messages must be a nonempty list"
    for msg in messages:
        if not isinstance(msg, dict) or msg.get("role") not in _VALID_ROLES:
            return "each message needs a valid role"
        if not isinstance(msg.get("content"), str):
            return "each message needs string content"
    if not any(msg["content"].strip() for msg in messages):
        return "prompt is empty"
    if "temperature" in payload and not isinstance(payload["temperature"], (int, float)):
        return "temperature must be a number"
    if "max_tokens" in payload and not isinstance(payload["max_tokens"], int):
        return "max_tokens must be an integer"
    return None


class GenerationServer:
    def __init__(self, checkpoint, host: str = "127.0.0.1", port: int = 0,
                 default_max_tokens: int = 64):
        self.model, self.tokenizer, self.manifest = load_checkpoint(checkpoint)
        self.default_max_tokens = default_max_tokens
        self._infer_lock = threading.Lock()
        handler = self._make_handler()
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.port = self.httpd.server_port
        self._thread: threading.Thread | None = None

    def complete(self, payload: dict) -> dict:
        prompt = "\n".join(msg["content"] for msg in payload["messages"])
        temperature = float(payload.get("temperature", 0.0))
        max_tokens = int(payload.get("max_tokens") or self.default_max_tokens)
        prefix = self.tokenizer.encode(prompt, bos=True)
        with self._infer_lock:
            generator = torch.Generator().manual_seed(0) if temperature > 0 else None
            out_ids = self.model.generate(
                prefix,
                max_new_tokens=max_tokens,
                eos_id=self.tokenizer.eos_id,
                temperature=temperature,
                generator=generator,
            )
        content = self.tokenizer.decode(out_ids)
        return {
            "id": "gen-0",
            "object": "chat.completion",
            "model": payload["model"],
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": content},
                    "finish_reason": "stop" if len(out_ids) < max_tokens else "length",
                }
            ],
            "usage": {
                "prompt_tokens": len(prefix),
                "completion_tokens": len(out_ids),
                "total_tokens": len(prefix) + len(out_ids),
            },
        }

    def _make_handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _send(self, status: int, obj: dict):
                body = json.dumps(obj).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                if self.path == "/health":
                    self._send(200, {"status": "ok"})
                else:
                    self._send(404, {"error": {"message": "not found"}})

            def do_POST(self):
                if not self.path.endswith("/chat/completions"):
                    self._send(404, {"error": {"message": "not found"}})
                    return
                try:
                    length = int(self.headers.get("Content-Length", 0))
                    payload = json.loads(self.rfile.read(length))
                except (ValueError, json.JSONDecodeError):
                    self._send(400, {"error": {"message": "body is not valid JSON"}})
                    return
                problem = validate_request(payload)
                if problem:
                    self._send(400, {"error": {"message": problem}})
                    return
                self._send(200, server.complete(payload))

        return Handler

    def start(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.httpd.shutdown()
        if self._thread:
            self._thread.join(timeout=5)

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}/v1/chat/completions"


def serve_generation(checkpoint, port: int = 8711, host: str = "127.0.0.1") -> GenerationServer:
    """Load a checkpoint and serve it; returns the started server."""
    return GenerationServer(checkpoint, host=host, port=port).start()
