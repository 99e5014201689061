"""Standalone host for one atomic server over stdio or HTTP.

Run as ``python -m surveyforge.servers.host --server search --transport stdio``
or through the ``surveyforge-server`` entry point. Backend selection follows
the usual environment variables; the search index comes from SF_FIXTURE_INDEX
unless the packaged corpus is acceptable.
"""

from __future__ import annotations

import argparse
import sys
import threading

from ..errors import ConfigError
from ..model import backend_from_env
from . import SERVER_ALIASES, SERVER_NAMES, build_server


def parse_transport(value: str) -> tuple[str, int]:
    if value == "stdio":
        return "stdio", 0
    if value.startswith("http:"):
        try:
            return "http", int(value.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad HTTP port in transport {value!r}")
    if value == "http":
        return "http", 0
    raise ConfigError(f"unknown transport {value!r}; expected stdio or http:PORT")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="surveyforge-server",
        description="Host one tool server over stdio or HTTP.",
    )
    parser.add_argument(
        "--server", required=True,
        choices=sorted(SERVER_NAMES) + sorted(SERVER_ALIASES),
        help="which server to host",
    )
    parser.add_argument(
        "--transport", default="stdio",
        help="stdio (default) or http:PORT (http picks a free port when PORT is 0)",
    )
    args = parser.parse_args(argv)

    try:
        kind, port = parse_transport(args.transport)
        server = build_server(args.server, backend=backend_from_env())
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if kind == "stdio":
        from ..protocol.server import serve_stdio
        serve_stdio(server, sys.stdin.buffer, sys.stdout.buffer)
        return 0

    from ..protocol.server import serve
    running = serve(server, transport="http", port=port)
    print(f"{server.server_id} listening on {running.base_url}", flush=True)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        running.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
