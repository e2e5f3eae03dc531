"""Worker wire protocol: line-delimited JSON over stdio or TCP.

Message framing and serialization are pinned (see docs/PROTOCOL.md) so
independent worker implementations can be compared byte-for-byte:

  handshake  {"protocol":1,"capabilities":[...],"batch_limit":N,"model_id":S}
  request    {"id":S,"op":"reward"|"generate"|"embed"|"classify","payload":{}}
  response   {"id":S,"ok":true,"result":{...}}
             {"id":S,"ok":false,"error":{"code":S,"message":S}}

Unknown fields are ignored. Responses may arrive in any order; callers
correlate by request id.
"""

from __future__ import annotations

import json
import shlex
import socket
import subprocess
import threading
from concurrent.futures import Future

PROTOCOL_VERSION = 1
WIRE_OPS = ("reward", "generate", "embed", "classify")


def dumps_wire(obj) -> str:
    """Canonical wire serialization: compact separators, UTF-8, insertion order."""
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def handshake_message(capabilities: list[str], batch_limit: int, model_id: str) -> dict:
    return {
        "protocol": PROTOCOL_VERSION,
        "capabilities": capabilities,
        "batch_limit": batch_limit,
        "model_id": model_id,
    }


def ok_response(request_id, result: dict) -> dict:
    return {"id": request_id, "ok": True, "result": result}


def error_response(request_id, code: str, message: str) -> dict:
    return {"id": request_id, "ok": False, "error": {"code": code, "message": message}}


class WorkerError(Exception):
    """A worker-side failure. Retryable errors may be re-dispatched."""

    def __init__(self, code: str, message: str, retryable: bool = False):
        self.code = code
        self.retryable = retryable
        super().__init__(f"{code}: {message}")


class ProtocolError(WorkerError):
    """The worker violated the wire protocol (bad handshake, unknown ids)."""

    def __init__(self, message: str):
        super().__init__("protocol", message, retryable=True)


class WireWorkerClient:
    """Client half of the wire protocol with request pipelining.

    Multiple requests may be in flight; a background reader thread resolves
    futures by response id. Unknown or duplicated response ids poison the
    client (every pending and future request fails).
    """

    def __init__(self, reader, writer, *, on_close=None, describe: str = "worker"):
        self._reader = reader
        self._writer = writer
        self._on_close = on_close
        self._describe = describe
        self._write_lock = threading.Lock()
        self._pending_lock = threading.Lock()
        self._pending: dict[str, Future] = {}
        self._next_id = 0
        self._poison: Exception | None = None
        self._closed = False

        raw = self._reader.readline()
        if not raw:
            raise ProtocolError(f"{describe}: no handshake line")
        try:
            hello = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"{describe}: handshake is not JSON: {exc.msg}") from exc
        if hello.get("protocol") != PROTOCOL_VERSION:
            raise ProtocolError(f"{describe}: unsupported protocol {hello.get('protocol')!r}")
        self.capabilities: tuple[str, ...] = tuple(hello.get("capabilities", ()))
        self.batch_limit: int = int(hello.get("batch_limit", 1))
        self.model_id: str = str(hello.get("model_id", ""))
        self._inflight = threading.BoundedSemaphore(max(1, self.batch_limit))

        self._reader_thread = threading.Thread(target=self._read_loop, daemon=True)
        self._reader_thread.start()

    @classmethod
    def spawn(cls, command: str | list[str]) -> "WireWorkerClient":
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, encoding="utf-8", bufsize=1,
        )

        def _close():
            try:
                proc.stdin.close()
            except OSError:
                pass
            proc.wait(timeout=10)

        return cls(proc.stdout, proc.stdin, on_close=_close, describe=argv[0])

    @classmethod
    def connect(cls, host: str, port: int) -> "WireWorkerClient":
        # Distinct read and write files: a read/write text wrapper drops
        # buffered input on write, losing pipelined responses.
        sock = socket.create_connection((host, port))
        reader = sock.makefile("r", encoding="utf-8", newline="\n")
        writer = sock.makefile("w", encoding="utf-8", newline="\n")

        def _close():
            # shutdown first: it unblocks the reader thread with EOF, so
            # closing cannot deadlock on the reader's buffer lock.
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()

        return cls(reader, writer, on_close=_close, describe=f"{host}:{port}")

    def _read_loop(self) -> None:
        try:
            for raw in self._reader:
                raw = raw.strip()
                if not raw:
                    continue
                msg = json.loads(raw)
                rid = msg.get("id")
                with self._pending_lock:
                    fut = self._pending.pop(rid, None)
                if fut is None:
                    raise ProtocolError(f"{self._describe}: response for unknown id {rid!r}")
                if msg.get("ok"):
                    fut.set_result(msg.get("result", {}))
                else:
                    err = msg.get("error") or {}
                    fut.set_exception(WorkerError(
                        err.get("code", "worker-fault"), err.get("message", ""), retryable=False))
        except Exception as exc:  # noqa: BLE001 - poison everything on any reader failure
            self._fail_pending(exc if isinstance(exc, WorkerError)
                               else ProtocolError(f"{self._describe}: {exc}"))
        else:
            self._fail_pending(ProtocolError(f"{self._describe}: connection closed"))

    def _fail_pending(self, exc: Exception) -> None:
        with self._pending_lock:
            self._poison = exc
            pending, self._pending = self._pending, {}
        for fut in pending.values():
            if not fut.done():
                fut.set_exception(exc)

    def submit(self, op: str, payload: dict) -> Future:
        fut: Future = Future()
        with self._pending_lock:
            if self._poison is not None:
                fut.set_exception(self._poison)
                return fut
            self._next_id += 1
            rid = f"r{self._next_id}"
            self._pending[rid] = fut
        line = dumps_wire({"id": rid, "op": op, "payload": payload})
        with self._write_lock:
            self._writer.write(line + "\n")
            self._writer.flush()
        return fut

    def call(self, op: str, payload: dict, timeout: float | None = None) -> dict:
        with self._inflight:
            fut = self.submit(op, payload)
            try:
                return fut.result(timeout=timeout)
            except TimeoutError:
                raise WorkerError("timeout", f"{self._describe}: no response for {op}", retryable=True) from None

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self._on_close is not None:
            try:
                self._on_close()
            except Exception:  # noqa: BLE001 - closing is best effort
                pass
        self._reader_thread.join(timeout=10)


def serve_lines(handler, infile, outfile) -> None:
    """Server half: read request lines, answer each, never die on bad input.

    ``handler(op, payload) -> result dict`` may raise WorkerError. Malformed
    request lines get a bad-request response (id null when unparseable).
    """
    for raw in infile:
        raw = raw.strip()
        if not raw:
            continue
        rid = None
        try:
            msg = json.loads(raw)
            if not isinstance(msg, dict):
                raise WorkerError("bad-request", "request must be a JSON object")
            rid = msg.get("id")
            op = msg.get("op")
            if op not in WIRE_OPS:
                raise WorkerError("bad-request", f"unknown op {op!r}")
            payload = msg.get("payload")
            if not isinstance(payload, dict):
                raise WorkerError("bad-request", "payload must be an object")
            response = ok_response(rid, handler(op, payload))
        except json.JSONDecodeError as exc:
            response = error_response(rid, "bad-request", f"invalid JSON: {exc.msg}")
        except WorkerError as exc:
            response = error_response(rid, exc.code, str(exc))
        except Exception as exc:  # noqa: BLE001 - convert to protocol-level fault
            response = error_response(rid, "worker-fault", str(exc))
        outfile.write(dumps_wire(response) + "\n")
        outfile.flush()


def serve_tcp(handler, handshake: dict, host: str, port: int, *, ready_callback=None) -> None:
    """Serve one connection at a time over TCP, handshake per connection."""
    with socket.create_server((host, port)) as server:
        if ready_callback is not None:
            ready_callback(server.getsockname()[1])
        while True:
            conn, _ = server.accept()
            with conn:
                # Distinct read and write files: a read/write text wrapper
                # drops buffered input on write, losing pipelined requests.
                reader = conn.makefile("r", encoding="utf-8", newline="\n")
                writer = conn.makefile("w", encoding="utf-8", newline="\n")
                writer.write(dumps_wire(handshake) + "\n")
                writer.flush()
                try:
                    serve_lines(handler, reader, writer)
                except (BrokenPipeError, ConnectionResetError):
                    pass
