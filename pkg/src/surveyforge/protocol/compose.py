"""Hierarchical composition: aggregate child servers into one higher-level server.

The composed handle exposes the disjoint union of child tools under
``childId.toolName`` names and routes each call to the owning child, so a
composed handle can itself be composed again.
"""

from __future__ import annotations

from surveyforge.errors import NameCollision
from surveyforge.protocol.client import ServerHandle, connect_in_process
from surveyforge.protocol.server import ToolServer
from surveyforge.protocol.tools import ToolDescriptor, ToolResult

PREFIX_SEPARATOR = "."


def compose(name: str, children: list[ServerHandle]) -> ServerHandle:
    """Build a handle over the union of child tool sets.

    Children must be initialized. Two children with the same server_id are a
    startup error (silent shadowing would make planner prompts ambiguous).
    """
    seen: set[str] = set()
    for child in children:
        if child.server_id in seen:
            raise NameCollision(f"two children share server id {child.server_id!r}")
        seen.add(child.server_id)

    composite = ToolServer(name)
    for child in children:
        for descriptor in child.list_tools():
            prefixed = f"{child.server_id}{PREFIX_SEPARATOR}{descriptor.name}"
            composite.register(
                ToolDescriptor(prefixed, descriptor.description, descriptor.input_schema),
                _route_to(child, descriptor.name),
            )
    return connect_in_process(composite)


def _route_to(child: ServerHandle, tool_name: str):
    def handler(args: dict) -> ToolResult:
        # Child result passes through untouched, error flag included.
        return child.call_tool(tool_name, args, raise_on_error=False)

    return handler


def base_tool_name(qualified: str) -> str:
    """The unprefixed tool name, however deep the composition nesting."""
    return qualified.rsplit(PREFIX_SEPARATOR, 1)[-1]


def owning_server(qualified: str) -> str:
    """First path segment: the server a fully qualified tool name belongs to."""
    return qualified.split(PREFIX_SEPARATOR, 1)[0]
