"""Stand-alone worker for the quadpipe wire protocol.

The package speaks the line-delimited JSON protocol documented in
docs/PROTOCOL.md at the repository root and ships one backend: a
deterministic stub whose outputs are pure functions of the request, so
transcripts can be compared byte-for-byte against any other conforming
worker. It deliberately imports nothing from quadpipe; the protocol
document is the only contract between the two packages.
"""

from model_adapter.server import BadRequest, serve_lines, serve_stdio, serve_tcp
from model_adapter.stub import StubBackend

__all__ = ["BadRequest", "StubBackend", "serve_lines", "serve_stdio", "serve_tcp"]
