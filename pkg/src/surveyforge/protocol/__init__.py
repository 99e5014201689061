"""Wire-level tool protocol: codec, transports, server hosting, composition."""

from surveyforge.protocol.messages import (
    RpcEnvelope,
    decode_message,
    encode_message,
    error_response,
    notification,
    request,
    response,
)
from surveyforge.protocol.tools import ToolDescriptor, ToolResult, text_part, json_part
from surveyforge.protocol.server import ToolServer, serve, RunningServer
from surveyforge.protocol.client import (
    ServerHandle,
    call_tool,
    list_tools,
    connect_in_process,
    connect_stdio,
    connect_http,
)
from surveyforge.protocol.compose import compose

PROTOCOL_VERSION = "2025-03-26"

__all__ = [
    "RpcEnvelope",
    "decode_message",
    "encode_message",
    "request",
    "response",
    "notification",
    "error_response",
    "ToolDescriptor",
    "ToolResult",
    "text_part",
    "json_part",
    "ToolServer",
    "serve",
    "RunningServer",
    "ServerHandle",
    "call_tool",
    "list_tools",
    "connect_in_process",
    "connect_stdio",
    "connect_http",
    "compose",
    "PROTOCOL_VERSION",
]
