"""Command-line entry point: serve the stub backend over stdio or TCP."""

from __future__ import annotations

import argparse
import sys

from model_adapter.server import DEFAULT_BATCH_LIMIT, serve_stdio, serve_tcp
from model_adapter.stub import DEFAULT_DIM, StubBackend


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="model-adapter",
        description="Serve the worker wire protocol from a deterministic stub backend.",
    )
    mode = parser.add_mutually_exclusive_group()
    mode.add_argument(
        "--stub",
        action="store_true",
        help="stand-alone stub: model_id 'stub', behaves as seed 0 (the default)",
    )
    mode.add_argument(
        "--seed",
        type=int,
        help="seed-scoped stub: byte-identical to the built-in mock at this seed",
    )
    parser.add_argument("--dim", type=int, default=DEFAULT_DIM, help="embedding dimension (default 64)")
    parser.add_argument(
        "--batch-limit",
        type=int,
        default=DEFAULT_BATCH_LIMIT,
        help="in-flight request bound advertised in the handshake (default 64)",
    )
    parser.add_argument(
        "--tcp",
        metavar="HOST:PORT",
        help="serve TCP connections instead of stdio; port 0 picks a free port",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is None:
        backend = StubBackend(seed=0, dim=args.dim)
        model_id = "stub"
    else:
        backend = StubBackend(seed=args.seed, dim=args.dim)
        model_id = f"mock-{args.seed}"
    try:
        if args.tcp is None:
            serve_stdio(backend, model_id=model_id, batch_limit=args.batch_limit)
        else:
            host, _, port_text = args.tcp.rpartition(":")
            if not host or not port_text.isdigit():
                raise ValueError(f"--tcp expects HOST:PORT, got {args.tcp!r}")
            serve_tcp(
                backend,
                model_id=model_id,
                host=host,
                port=int(port_text),
                batch_limit=args.batch_limit,
                announce=lambda address: print(f"listening on {address}", file=sys.stderr, flush=True),
            )
    except KeyboardInterrupt:
        return 0
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
