"""JSON-RPC 2.0 message codec.

Frames are single JSON objects, one per line on stdio transports. The codec
round-trips byte-exactly: unknown fields and key order survive decode/encode,
so ``encode_message(decode_message(frame)) == frame`` for any frame we emit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional

from surveyforge.errors import MalformedFrame, ProtocolViolation

JSONRPC_VERSION = "2.0"

# Wire error codes.
PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
TOOL_FAILURE = -32000


@dataclass
class RpcEnvelope:
    """One protocol message, plus the raw parsed object it came from.

    ``raw`` is the source of truth for re-encoding; the typed attributes are
    views into it. Mutating attributes does not write back into ``raw`` —
    build new envelopes with the constructors below instead.
    """

    raw: dict = field(default_factory=dict)

    @property
    def id(self) -> Any:
        return self.raw.get("id")

    @property
    def method(self) -> Optional[str]:
        return self.raw.get("method")

    @property
    def params(self) -> Any:
        return self.raw.get("params")

    @property
    def result(self) -> Any:
        return self.raw.get("result")

    @property
    def error(self) -> Any:
        return self.raw.get("error")

    @property
    def is_request(self) -> bool:
        return "method" in self.raw and "id" in self.raw

    @property
    def is_notification(self) -> bool:
        return "method" in self.raw and "id" not in self.raw

    @property
    def is_response(self) -> bool:
        return "result" in self.raw or "error" in self.raw


def decode_message(frame: bytes | str) -> RpcEnvelope:
    """Decode one complete frame into an envelope.

    Raises MalformedFrame for invalid JSON and ProtocolViolation for JSON
    that is not a usable message (non-object, request without a method,
    response carrying both result and error).
    """
    if isinstance(frame, bytes):
        try:
            text = frame.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFrame(f"frame is not valid UTF-8: {exc}") from exc
    else:
        text = frame
    text = text.strip()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFrame(f"frame is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ProtocolViolation("message must be a JSON object")
    has_method = "method" in raw
    has_result = "result" in raw
    has_error = "error" in raw
    if has_result and has_error:
        raise ProtocolViolation("response carries both result and error")
    if not has_method and not has_result and not has_error:
        raise ProtocolViolation("request is missing a method")
    if has_method and not isinstance(raw["method"], str):
        raise ProtocolViolation("method must be a string")
    return RpcEnvelope(raw=raw)


def encode_message(envelope: RpcEnvelope) -> bytes:
    """Serialize an envelope back to its canonical compact frame."""
    return json.dumps(envelope.raw, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def request(req_id: Any, method: str, params: Any = None) -> RpcEnvelope:
    raw: dict = {"jsonrpc": JSONRPC_VERSION, "id": req_id, "method": method}
    if params is not None:
        raw["params"] = params
    return RpcEnvelope(raw=raw)


def notification(method: str, params: Any = None) -> RpcEnvelope:
    raw: dict = {"jsonrpc": JSONRPC_VERSION, "method": method}
    if params is not None:
        raw["params"] = params
    return RpcEnvelope(raw=raw)


def response(req_id: Any, result: Any) -> RpcEnvelope:
    return RpcEnvelope(raw={"jsonrpc": JSONRPC_VERSION, "id": req_id, "result": result})


def error_response(req_id: Any, code: int, message: str, data: Any = None) -> RpcEnvelope:
    err: dict = {"code": code, "message": message}
    if data is not None:
        err["data"] = data
    return RpcEnvelope(raw={"jsonrpc": JSONRPC_VERSION, "id": req_id, "error": err})
