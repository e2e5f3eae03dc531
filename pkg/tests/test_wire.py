import io
import json
import socket
import threading

import pytest

from quadpipe.mock import MockWorker, serve_stdio
from quadpipe.wire import (
    WireWorkerClient,
    WorkerError,
    dumps_wire,
    error_response,
    handshake_message,
    ok_response,
    serve_lines,
)


def run_server(lines: list[str]) -> list[dict]:
    """Feed request lines to a seed-0 mock served over serve_lines."""
    worker = MockWorker(seed=0)
    out = io.StringIO()
    serve_lines(worker.call, io.StringIO("".join(line + "\n" for line in lines)), out)
    return [json.loads(raw) for raw in out.getvalue().splitlines()]


def test_canonical_serialization():
    assert dumps_wire({"id": "r1", "ok": True, "result": {}}) == '{"id":"r1","ok":true,"result":{}}'
    assert dumps_wire({"text": "café"}) == '{"text":"café"}'


def test_envelope_helpers():
    hello = handshake_message(["reward"], 8, "mock-0")
    assert list(hello) == ["protocol", "capabilities", "batch_limit", "model_id"]
    assert hello["protocol"] == 1
    assert ok_response("r1", {"score": 0.5}) == {"id": "r1", "ok": True, "result": {"score": 0.5}}
    err = error_response("r2", "bad-request", "nope")
    assert err == {"id": "r2", "ok": False, "error": {"code": "bad-request", "message": "nope"}}


def test_serve_lines_answers_and_survives_bad_input():
    good = dumps_wire({"id": "a", "op": "reward",
                       "payload": {"question": "q", "answer": "a", "variant": "answer"}})
    responses = run_server([
        "this is not json",
        dumps_wire({"id": "x", "op": "teleport", "payload": {}}),
        dumps_wire({"id": "y", "op": "reward", "payload": "not an object"}),
        dumps_wire(["not", "an", "object"]),
        good,
    ])
    assert [r["ok"] for r in responses] == [False, False, False, False, True]
    assert responses[0]["id"] is None
    assert responses[0]["error"]["code"] == "bad-request"
    assert responses[1]["id"] == "x"
    assert responses[2]["id"] == "y"
    assert responses[3]["id"] is None
    assert 0.0 <= responses[4]["result"]["score"] < 1.0


def test_serve_lines_reports_handler_faults():
    def handler(op, payload):
        raise RuntimeError("kaboom")

    out = io.StringIO()
    serve_lines(handler, io.StringIO(dumps_wire({"id": "z", "op": "reward", "payload": {}}) + "\n"), out)
    response = json.loads(out.getvalue())
    assert response == {"id": "z", "ok": False,
                        "error": {"code": "worker-fault", "message": "kaboom"}}


def socket_close(sock):
    """shutdown-then-close, so a reader blocked on the socket sees EOF."""

    def _close():
        try:
            sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        sock.close()

    return _close


class PipeWorker:
    """In-process worker endpoint backed by a socketpair."""

    def __init__(self, worker: MockWorker):
        client_sock, server_sock = socket.socketpair()
        reader = client_sock.makefile("r", encoding="utf-8", newline="\n")
        writer = client_sock.makefile("w", encoding="utf-8", newline="\n")
        server_in = server_sock.makefile("r", encoding="utf-8", newline="\n")
        server_out = server_sock.makefile("w", encoding="utf-8", newline="\n")
        self.thread = threading.Thread(
            target=serve_stdio, args=(worker, server_in, server_out), daemon=True)
        self.thread.start()
        self.client = WireWorkerClient(reader, writer,
                                       on_close=socket_close(client_sock))


def test_client_handshake_and_call():
    link = PipeWorker(MockWorker(seed=3, batch_limit=16))
    client = link.client
    assert client.model_id == "mock-3"
    assert client.batch_limit == 16
    assert set(client.capabilities) == {"reward", "generate", "embed", "classify"}
    result = client.call("reward", {"question": "q", "answer": "a", "variant": "answer"})
    assert result == MockWorker(seed=3).call(
        "reward", {"question": "q", "answer": "a", "variant": "answer"})
    client.close()


def test_client_pipelines_out_of_order_safe():
    link = PipeWorker(MockWorker(seed=1, batch_limit=64))
    futures = [link.client.submit("classify", {"question": f"q{i}"}) for i in range(40)]
    levels = [f.result(timeout=5)["levels"] for f in futures]
    direct = MockWorker(seed=1)
    assert levels == [direct.call("classify", {"question": f"q{i}"})["levels"] for i in range(40)]
    link.client.close()


def test_client_raises_worker_error_with_code():
    link = PipeWorker(MockWorker(seed=0))
    with pytest.raises(WorkerError) as exc:
        link.client.call("reward", {"question": "", "answer": "a"})
    assert exc.value.code == "bad-request"
    assert not exc.value.retryable
    result = link.client.call("classify", {"question": "still alive"})
    assert result["levels"]
    link.client.close()


def test_client_poisons_on_unknown_response_id():
    client_sock, server_sock = socket.socketpair()
    reader = client_sock.makefile("r", encoding="utf-8", newline="\n")
    writer = client_sock.makefile("w", encoding="utf-8", newline="\n")
    server_in = server_sock.makefile("r", encoding="utf-8", newline="\n")
    server_out = server_sock.makefile("w", encoding="utf-8", newline="\n")
    server_out.write(dumps_wire(handshake_message(["reward"], 4, "rogue")) + "\n")
    server_out.flush()
    client = WireWorkerClient(reader, writer, on_close=socket_close(client_sock))
    fut = client.submit("reward", {"question": "q", "answer": "a"})
    server_in.readline()
    server_out.write(dumps_wire(ok_response("never-issued", {})) + "\n")
    server_out.flush()
    with pytest.raises(WorkerError):
        fut.result(timeout=5)
    with pytest.raises(WorkerError):
        client.submit("reward", {"question": "q", "answer": "a"}).result(timeout=5)
    client.close()
    server_in.close()
    server_out.close()


def test_spawned_worker_round_trip():
    client = WireWorkerClient.spawn(
        ["python3", "-m", "quadpipe.cli", "mock-worker", "--seed", "7"])
    try:
        assert client.model_id == "mock-7"
        payload = {"question": "q", "answer": "a", "variant": "answer",
                   "media": [{"kind": "image", "uri": "img://1"}]}
        assert client.call("reward", payload, timeout=10) == MockWorker(seed=7).call("reward", payload)
    finally:
        client.close()
