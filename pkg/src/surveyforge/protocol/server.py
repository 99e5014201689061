"""Server-side hosting: in-process dispatch, stdio loop, HTTP endpoint.

One ``ToolServer`` holds the handler table; the transports here are thin
shells around its ``dispatch``. Handlers run on worker threads, so two
in-flight calls never block each other and a handler exception becomes an
is_error result rather than a dropped connection.
"""

from __future__ import annotations

import json
import logging
import threading
import traceback
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, IO, Optional

from surveyforge.errors import BindFailure, ProtocolError, ProtocolViolation, ToolFailed
from surveyforge.protocol import messages
from surveyforge.protocol.messages import (
    INVALID_PARAMS,
    INVALID_REQUEST,
    METHOD_NOT_FOUND,
    PARSE_ERROR,
    RpcEnvelope,
    TOOL_FAILURE,
)
from surveyforge.protocol.tools import ToolDescriptor, ToolResult, failed

logger = logging.getLogger(__name__)

Handler = Callable[[dict], ToolResult]


class ToolServer:
    """A named collection of tools with the standard three-method surface."""

    def __init__(self, server_id: str, version: str = "0.1.0", protocol_version: str = "2025-03-26"):
        self.server_id = server_id
        self.version = version
        self.protocol_version = protocol_version
        self._tools: dict[str, tuple[ToolDescriptor, Handler]] = {}

    def register(self, descriptor: ToolDescriptor, handler: Handler) -> None:
        if descriptor.name in self._tools:
            raise ProtocolViolation(f"duplicate tool name {descriptor.name!r} on server {self.server_id!r}")
        self._tools[descriptor.name] = (descriptor, handler)

    def tool(self, name: str, description: str, input_schema: Optional[dict] = None):
        """Decorator form of register, for handler tables defined inline."""

        def wrap(fn: Handler) -> Handler:
            self.register(ToolDescriptor(name, description, input_schema or {"type": "object"}), fn)
            return fn

        return wrap

    @property
    def descriptors(self) -> list[ToolDescriptor]:
        return [desc for desc, _ in self._tools.values()]

    def call(self, name: str, args: dict) -> ToolResult:
        """Run one tool. Schema is validated server-side; handler errors become
        is_error results, except unknown-tool and schema failures which raise."""
        if name not in self._tools:
            raise ProtocolViolation(f"unknown tool {name!r}")
        descriptor, handler = self._tools[name]
        descriptor.validate_args(args)
        try:
            return handler(args)
        except ToolFailed as exc:
            return failed(str(exc))
        except Exception as exc:  # handler panic: degrade to a failed result
            logger.exception("tool %s.%s crashed", self.server_id, name)
            return failed(f"tool crashed: {exc}", detail={"traceback": traceback.format_exc(limit=5)})

    # -- protocol dispatch ---------------------------------------------------

    def dispatch(self, envelope: RpcEnvelope) -> Optional[RpcEnvelope]:
        """Answer one request envelope; None for notifications."""
        if envelope.is_notification:
            return None
        if not envelope.is_request:
            return messages.error_response(envelope.id, INVALID_REQUEST, "expected a request")
        method = envelope.method
        req_id = envelope.id
        try:
            if method == "initialize":
                return messages.response(req_id, {
                    "protocolVersion": self.protocol_version,
                    "serverInfo": {"name": self.server_id, "version": self.version},
                    "capabilities": {"tools": {}},
                })
            if method == "tools/list":
                return messages.response(req_id, {"tools": [d.to_wire() for d in self.descriptors]})
            if method == "tools/call":
                params = envelope.params
                if not isinstance(params, dict) or "name" not in params:
                    return messages.error_response(req_id, INVALID_PARAMS, "tools/call needs {name, arguments}")
                name = params["name"]
                args = params.get("arguments") or {}
                if name not in self._tools:
                    return messages.error_response(req_id, INVALID_PARAMS, f"unknown tool {name!r}")
                try:
                    result = self.call(name, args)
                except ProtocolError as exc:
                    return messages.error_response(req_id, exc.rpc_code, str(exc))
                except Exception as exc:
                    return messages.error_response(req_id, TOOL_FAILURE, f"tool failure: {exc}")
                return messages.response(req_id, result.to_wire())
            return messages.error_response(req_id, METHOD_NOT_FOUND, f"unknown method {method!r}")
        except ProtocolError as exc:
            return messages.error_response(req_id, exc.rpc_code, str(exc))


def serve_stdio(server: ToolServer, stdin: IO[bytes], stdout: IO[bytes]) -> None:
    """Blocking stdio loop: one message per UTF-8 line, ``\\n`` terminated.

    Each request is handled on its own thread; responses interleave in
    completion order with ids preserved.
    """
    write_lock = threading.Lock()
    workers: list[threading.Thread] = []

    def send(envelope: RpcEnvelope) -> None:
        frame = messages.encode_message(envelope) + b"\n"
        with write_lock:
            stdout.write(frame)
            stdout.flush()

    def handle(line: bytes) -> None:
        try:
            envelope = messages.decode_message(line)
        except Exception as exc:
            code = getattr(exc, "rpc_code", PARSE_ERROR)
            send(messages.error_response(None, code, str(exc)))
            return
        reply = server.dispatch(envelope)
        if reply is not None:
            send(reply)

    while True:
        line = stdin.readline()
        if not line:
            break
        if not line.strip():
            continue
        worker = threading.Thread(target=handle, args=(line,), daemon=True)
        worker.start()
        workers.append(worker)
    for worker in workers:
        worker.join(timeout=5.0)


class _HttpRpcHandler(BaseHTTPRequestHandler):
    server_version = "surveyforge-rpc/0.1"
    tool_server: ToolServer  # set by the bound subclass

    def log_message(self, fmt: str, *args: Any) -> None:  # quiet by default
        logger.debug("http %s", fmt % args)

    def do_POST(self) -> None:  # noqa: N802 (http.server API)
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        try:
            envelope = messages.decode_message(body)
        except Exception as exc:
            code = getattr(exc, "rpc_code", PARSE_ERROR)
            self._reply(messages.error_response(None, code, str(exc)))
            return
        reply = self.tool_server.dispatch(envelope)
        if reply is None:
            self.send_response(202)
            self.send_header("Content-Length", "0")
            self.end_headers()
            return
        self._reply(reply)

    def do_GET(self) -> None:  # noqa: N802
        # Server-initiated message stream. This server never pushes messages,
        # so the stream opens, confirms itself, and stays silent.
        if self.path.rstrip("/") in ("", "/rpc"):
            self.send_response(404)
            self.end_headers()
            return
        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-cache")
        self.end_headers()
        try:
            self.wfile.write(b": connected\n\n")
            self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError):
            pass

    def _reply(self, envelope: RpcEnvelope) -> None:
        payload = messages.encode_message(envelope)
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)


class RunningServer:
    """Handle on a hosted server; ``stop()`` releases its endpoint."""

    def __init__(self, tool_server: ToolServer, http_server: Optional[ThreadingHTTPServer] = None,
                 thread: Optional[threading.Thread] = None):
        self.tool_server = tool_server
        self._http_server = http_server
        self._thread = thread

    @property
    def port(self) -> Optional[int]:
        if self._http_server is None:
            return None
        return self._http_server.server_address[1]

    @property
    def base_url(self) -> Optional[str]:
        if self._http_server is None:
            return None
        return f"http://127.0.0.1:{self.port}/rpc"

    def stop(self) -> None:
        if self._http_server is not None:
            self._http_server.shutdown()
            self._http_server.server_close()
            if self._thread is not None:
                self._thread.join(timeout=5.0)
            self._http_server = None

    def __enter__(self) -> "RunningServer":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.stop()


def serve(server: ToolServer, transport: str = "in-process", port: int = 0) -> RunningServer:
    """Host a server. ``in-process`` returns immediately; ``http`` binds a port
    and serves on a background thread; use ``serve_stdio`` for stdio hosting."""
    if transport == "in-process":
        return RunningServer(server)
    if transport == "http":
        handler = type("BoundHandler", (_HttpRpcHandler,), {"tool_server": server})
        try:
            httpd = ThreadingHTTPServer(("127.0.0.1", port), handler)
        except OSError as exc:
            raise BindFailure(f"cannot bind port {port}: {exc}") from exc
        httpd.daemon_threads = True
        thread = threading.Thread(target=httpd.serve_forever, daemon=True)
        thread.start()
        return RunningServer(server, httpd, thread)
    raise ValueError(f"unknown transport {transport!r}")
