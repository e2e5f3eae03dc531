import json
import shutil
import subprocess
import sys

import pytest

from make_golden import GOLDEN_PATH

requires_reference_worker = pytest.mark.skipif(
    shutil.which("quadpipe") is None,
    reason="reference worker CLI is not installed",
)


def load_golden() -> list[dict]:
    with GOLDEN_PATH.open(encoding="utf-8") as handle:
        return [json.loads(line) for line in handle]


@pytest.fixture(scope="session")
def golden_entries() -> list[dict]:
    return load_golden()


class LineWorker:
    """A worker subprocess speaking the line protocol over stdio."""

    def __init__(self, command: list[str]) -> None:
        self.proc = subprocess.Popen(
            command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
        )
        self.handshake = self.proc.stdout.readline().rstrip("\n")

    def send_lines(self, lines: list[str]) -> None:
        for line in lines:
            self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()

    def read_lines(self, n: int) -> list[str]:
        return [self.proc.stdout.readline().rstrip("\n") for _ in range(n)]

    def roundtrip(self, lines: list[str]) -> list[str]:
        self.send_lines(lines)
        return self.read_lines(len(lines))

    def close(self) -> int:
        if self.proc.stdin and not self.proc.stdin.closed:
            self.proc.stdin.close()
        return self.proc.wait(timeout=10)


@pytest.fixture
def stub_worker():
    worker = LineWorker([sys.executable, "-m", "model_adapter.cli", "--stub"])
    yield worker
    worker.close()


@pytest.fixture
def reference_worker():
    worker = LineWorker(["quadpipe", "mock-worker", "--seed", "0"])
    yield worker
    worker.close()
