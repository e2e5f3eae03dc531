"""Wire framing and serve loops for worker backends.

Framing follows docs/PROTOCOL.md: one compact JSON object per line,
``ensure_ascii=False``, pinned key order per message type, worker speaks
first with a handshake. A backend is anything with a ``capabilities``
sequence and a ``handle(op, payload) -> dict`` method; it signals client
mistakes by raising :class:`BadRequest` and any other exception becomes
a retryable ``worker-fault`` response. The loop never dies on bad input:
unparseable lines are answered with ``"id":null`` and serving continues.
"""

from __future__ import annotations

import json
import socket
from typing import Callable, TextIO

PROTOCOL_VERSION = 1
DEFAULT_BATCH_LIMIT = 64


class BadRequest(ValueError):
    """Request or payload defect attributable to the client; not retryable."""


def dumps_line(obj) -> str:
    """Canonical wire serialization: compact separators, insertion key order."""
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def handshake_line(capabilities, batch_limit: int, model_id: str) -> str:
    return dumps_line(
        {
            "protocol": PROTOCOL_VERSION,
            "capabilities": list(capabilities),
            "batch_limit": batch_limit,
            "model_id": model_id,
        }
    )


def ok_line(request_id, result: dict) -> str:
    return dumps_line({"id": request_id, "ok": True, "result": result})


def error_line(request_id, code: str, message: str) -> str:
    return dumps_line({"id": request_id, "ok": False, "error": {"code": code, "message": message}})


def respond(backend, line: str) -> str | None:
    """Produce the response line for one request line, or None for blank lines."""
    line = line.strip()
    if not line:
        return None
    try:
        request = json.loads(line)
    except json.JSONDecodeError as exc:
        return error_line(None, "bad-request", f"invalid JSON: {exc.msg}")
    if not isinstance(request, dict):
        return error_line(None, "bad-request", "bad-request: request must be a JSON object")
    request_id = request.get("id")
    op = request.get("op")
    if op not in backend.capabilities:
        return error_line(request_id, "bad-request", f"bad-request: unknown op {op!r}")
    payload = request.get("payload")
    if not isinstance(payload, dict):
        return error_line(request_id, "bad-request", "bad-request: payload must be an object")
    try:
        result = backend.handle(op, payload)
    except BadRequest as exc:
        return error_line(request_id, "bad-request", f"bad-request: {exc}")
    except Exception as exc:
        return error_line(request_id, "worker-fault", str(exc))
    return ok_line(request_id, result)


def serve_lines(
    backend,
    *,
    model_id: str,
    reader: TextIO,
    writer: TextIO,
    batch_limit: int = DEFAULT_BATCH_LIMIT,
) -> None:
    """Serve one connection: handshake, then one response per request line until EOF."""
    writer.write(handshake_line(backend.capabilities, batch_limit, model_id) + "\n")
    writer.flush()
    for line in reader:
        response = respond(backend, line)
        if response is None:
            continue
        writer.write(response + "\n")
        writer.flush()


def serve_stdio(backend, *, model_id: str, batch_limit: int = DEFAULT_BATCH_LIMIT) -> None:
    import sys

    serve_lines(backend, model_id=model_id, reader=sys.stdin, writer=sys.stdout, batch_limit=batch_limit)


def serve_tcp(
    backend,
    *,
    model_id: str,
    host: str,
    port: int,
    batch_limit: int = DEFAULT_BATCH_LIMIT,
    announce: Callable[[str], None] | None = None,
    max_connections: int | None = None,
) -> None:
    """Accept TCP connections sequentially and serve each until the peer closes.

    Port 0 binds an ephemeral port; ``announce`` receives the bound
    ``host:port`` so callers can discover it. ``max_connections`` bounds
    the accept loop for tests; the default serves forever.
    """
    with socket.create_server((host, port)) as listener:
        bound_host, bound_port = listener.getsockname()[:2]
        if announce is not None:
            announce(f"{bound_host}:{bound_port}")
        served = 0
        while max_connections is None or served < max_connections:
            conn, _ = listener.accept()
            with conn:
                reader = conn.makefile("r", encoding="utf-8", newline="\n")
                writer = conn.makefile("w", encoding="utf-8", newline="\n")
                try:
                    serve_lines(
                        backend,
                        model_id=model_id,
                        reader=reader,
                        writer=writer,
                        batch_limit=batch_limit,
                    )
                except (BrokenPipeError, ConnectionResetError):
                    pass
                finally:
                    reader.close()
                    try:
                        writer.close()
                    except (BrokenPipeError, ConnectionResetError):
                        pass
            served += 1
