"""Client sessions: one ServerHandle per server, over any of three transports.

A handle validates tool names and arguments before anything touches the
transport, so a bad call never produces a transport error, and correlates
responses by id so out-of-order completion is legal.
"""

from __future__ import annotations

import itertools
import subprocess
import threading
from typing import Any, Optional, Sequence

import httpx

from surveyforge.errors import (
    ProtocolViolation,
    SchemaViolation,
    ToolFailed,
    ToolTimeout,
    TransportDown,
    UnknownTool,
)
from surveyforge.protocol import messages
from surveyforge.protocol.messages import RpcEnvelope
from surveyforge.protocol.server import ToolServer
from surveyforge.protocol.tools import ToolDescriptor, ToolResult

DEFAULT_CALL_TIMEOUT = 120.0


class InProcessTransport:
    """Directly dispatches into a ToolServer living in this process."""

    kind = "in-process"

    def __init__(self, server: ToolServer):
        self._server = server
        self.request_count = 0

    def describe(self) -> str:
        return f"in-process:{self._server.server_id}"

    def request(self, envelope: RpcEnvelope, timeout: Optional[float]) -> RpcEnvelope:
        self.request_count += 1
        if timeout is None:
            reply = self._server.dispatch(envelope)
        else:
            box: list[Optional[RpcEnvelope]] = [None]

            def run() -> None:
                box[0] = self._server.dispatch(envelope)

            worker = threading.Thread(target=run, daemon=True)
            worker.start()
            worker.join(timeout)
            if worker.is_alive():
                raise ToolTimeout(f"call exceeded {timeout}s budget")
            reply = box[0]
        if reply is None:
            raise ProtocolViolation("no response for request")
        return reply

    def close(self) -> None:
        pass


class StdioTransport:
    """Spawns a subprocess speaking newline-delimited messages on stdio."""

    kind = "stdio"

    def __init__(self, command: Sequence[str], env: Optional[dict] = None):
        self._command = list(command)
        self.request_count = 0
        try:
            self._proc = subprocess.Popen(
                self._command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                env=env,
            )
        except OSError as exc:
            raise TransportDown(f"cannot spawn {self._command[0]!r}: {exc}") from exc
        self._write_lock = threading.Lock()
        self._pending: dict[Any, "_PendingReply"] = {}
        self._pending_lock = threading.Lock()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def describe(self) -> str:
        return "stdio:" + " ".join(self._command)

    def _read_loop(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            if not line.strip():
                continue
            try:
                envelope = messages.decode_message(line)
            except Exception:
                continue  # garbage on stdout: skip, correlation saves us
            with self._pending_lock:
                pending = self._pending.pop(envelope.id, None)
            if pending is not None:
                pending.deliver(envelope)
        # EOF: fail everything still in flight
        with self._pending_lock:
            leftovers = list(self._pending.values())
            self._pending.clear()
        for pending in leftovers:
            pending.fail(TransportDown("server closed stdout"))

    def request(self, envelope: RpcEnvelope, timeout: Optional[float]) -> RpcEnvelope:
        self.request_count += 1
        if self._proc.poll() is not None:
            raise TransportDown("server process has exited")
        pending = _PendingReply()
        with self._pending_lock:
            self._pending[envelope.id] = pending
        frame = messages.encode_message(envelope) + b"\n"
        try:
            with self._write_lock:
                assert self._proc.stdin is not None
                self._proc.stdin.write(frame)
                self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            with self._pending_lock:
                self._pending.pop(envelope.id, None)
            raise TransportDown(f"server stdin closed: {exc}") from exc
        reply = pending.wait(timeout)
        if reply is None:
            with self._pending_lock:
                self._pending.pop(envelope.id, None)
            raise ToolTimeout(f"no response within {timeout}s")
        return reply

    def close(self) -> None:
        try:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.wait(timeout=5.0)
        except Exception:
            self._proc.kill()


class _PendingReply:
    def __init__(self) -> None:
        self._event = threading.Event()
        self._reply: Optional[RpcEnvelope] = None
        self._error: Optional[Exception] = None

    def deliver(self, reply: RpcEnvelope) -> None:
        self._reply = reply
        self._event.set()

    def fail(self, error: Exception) -> None:
        self._error = error
        self._event.set()

    def wait(self, timeout: Optional[float]) -> Optional[RpcEnvelope]:
        if not self._event.wait(timeout):
            return None
        if self._error is not None:
            raise self._error
        return self._reply


class HttpTransport:
    """One POST per message against a base URL; responses come back in-band."""

    kind = "http"

    def __init__(self, base_url: str):
        self.base_url = base_url.rstrip("/")
        self.request_count = 0
        self._client = httpx.Client()

    def describe(self) -> str:
        return f"http:{self.base_url}"

    def request(self, envelope: RpcEnvelope, timeout: Optional[float]) -> RpcEnvelope:
        self.request_count += 1
        try:
            http_response = self._client.post(
                self.base_url,
                content=messages.encode_message(envelope),
                headers={"Content-Type": "application/json"},
                timeout=timeout,
            )
        except httpx.TimeoutException as exc:
            raise ToolTimeout(f"no response within {timeout}s") from exc
        except httpx.HTTPError as exc:
            raise TransportDown(f"http transport failed: {exc}") from exc
        if http_response.status_code != 200:
            raise TransportDown(f"unexpected http status {http_response.status_code}")
        return messages.decode_message(http_response.content)

    def close(self) -> None:
        self._client.close()


class ServerHandle:
    """Client-side view of one server: identity, transport, cached tools."""

    def __init__(self, transport, server_id: Optional[str] = None, origin: str = "native",
                 call_timeout: float = DEFAULT_CALL_TIMEOUT):
        self.transport = transport
        self.server_id = server_id or "unknown"
        self.origin = origin
        self.call_timeout = call_timeout
        self.tools: Optional[list[ToolDescriptor]] = None
        self.server_info: Optional[dict] = None
        self._ids = itertools.count(1)
        self._id_lock = threading.Lock()

    def _next_id(self) -> int:
        with self._id_lock:
            return next(self._ids)

    def _request(self, method: str, params: Any = None, timeout: Optional[float] = None) -> RpcEnvelope:
        envelope = messages.request(self._next_id(), method, params)
        return self.transport.request(envelope, timeout)

    def initialize(self) -> dict:
        reply = self._request("initialize", timeout=self.call_timeout)
        if reply.error is not None:
            raise ProtocolViolation(f"initialize failed: {reply.error}")
        info = reply.result or {}
        self.server_info = info
        advertised = (info.get("serverInfo") or {}).get("name")
        if advertised:
            self.server_id = advertised
        return info

    def list_tools(self, refresh: bool = False) -> list[ToolDescriptor]:
        """Every tool the server exposes; cached on the handle after first call."""
        if self.tools is not None and not refresh:
            return self.tools
        reply = self._request("tools/list", timeout=self.call_timeout)
        if reply.error is not None:
            raise ProtocolViolation(f"tools/list failed: {reply.error}")
        result = reply.result
        if not isinstance(result, dict) or not isinstance(result.get("tools"), list):
            raise ProtocolViolation("tools/list response missing `tools` array")
        self.tools = [ToolDescriptor.from_wire(t) for t in result["tools"]]
        names = [t.name for t in self.tools]
        if len(names) != len(set(names)):
            raise ProtocolViolation(f"server {self.server_id!r} advertises duplicate tool names")
        return self.tools

    def descriptor(self, name: str) -> ToolDescriptor:
        for candidate in self.list_tools():
            if candidate.name == name:
                return candidate
        raise UnknownTool(f"server {self.server_id!r} has no tool {name!r}")

    def call_tool(self, name: str, args: Optional[dict] = None, raise_on_error: bool = True) -> ToolResult:
        """Invoke one tool. Args are validated client-side before dispatch;
        is_error results raise ToolFailed unless ``raise_on_error`` is False."""
        args = args or {}
        descriptor = self.descriptor(name)  # UnknownTool before any dispatch
        descriptor.validate_args(args)      # SchemaViolation before any dispatch
        reply = self._request("tools/call", {"name": name, "arguments": args}, timeout=self.call_timeout)
        if reply.error is not None:
            code = reply.error.get("code")
            message = reply.error.get("message", "")
            if code == messages.INVALID_PARAMS:
                raise SchemaViolation(f"server rejected args: {message}")
            raise ProtocolViolation(f"tools/call error {code}: {message}")
        result = ToolResult.from_wire(reply.result)
        if result.is_error and raise_on_error:
            error = ToolFailed(result.first_text)
            error.result = result  # type: ignore[attr-defined]
            raise error
        return result

    def describe_transport(self) -> str:
        return self.transport.describe()

    def close(self) -> None:
        self.transport.close()


def connect_in_process(server: ToolServer, origin: str = "native",
                       call_timeout: float = DEFAULT_CALL_TIMEOUT) -> ServerHandle:
    handle = ServerHandle(InProcessTransport(server), server_id=server.server_id,
                          origin=origin, call_timeout=call_timeout)
    handle.initialize()
    return handle


def connect_stdio(command: Sequence[str], origin: str = "native", env: Optional[dict] = None,
                  call_timeout: float = DEFAULT_CALL_TIMEOUT) -> ServerHandle:
    handle = ServerHandle(StdioTransport(command, env=env), origin=origin, call_timeout=call_timeout)
    handle.initialize()
    return handle


def connect_http(base_url: str, origin: str = "native",
                 call_timeout: float = DEFAULT_CALL_TIMEOUT) -> ServerHandle:
    handle = ServerHandle(HttpTransport(base_url), origin=origin, call_timeout=call_timeout)
    handle.initialize()
    return handle


def list_tools(handle: ServerHandle) -> list[ToolDescriptor]:
    return handle.list_tools()


def call_tool(handle: ServerHandle, name: str, args: Optional[dict] = None,
              raise_on_error: bool = True) -> ToolResult:
    return handle.call_tool(name, args, raise_on_error=raise_on_error)
