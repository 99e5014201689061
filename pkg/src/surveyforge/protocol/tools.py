"""Tool descriptors and results: the currency of every agent-server exchange."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

import jsonschema

from surveyforge.errors import ProtocolViolation, SchemaViolation

TOOL_NAME_RE = re.compile(r"^[a-z][a-z0-9_.-]*$")


@dataclass(frozen=True)
class ToolDescriptor:
    """A named, schema'd capability a server exposes.

    The description is what the planner sees when it selects tools, so it must
    be non-empty and say what the tool does.
    """

    name: str
    description: str
    input_schema: dict = field(default_factory=lambda: {"type": "object"})

    def __post_init__(self) -> None:
        if not TOOL_NAME_RE.match(self.name):
            raise ProtocolViolation(f"bad tool name {self.name!r}")
        if not self.description.strip():
            raise ProtocolViolation(f"tool {self.name!r} has an empty description")
        if self.input_schema.get("type", "object") != "object":
            raise ProtocolViolation(f"tool {self.name!r}: input schema must describe an object")
        try:
            jsonschema.Draft202012Validator.check_schema(self.input_schema)
        except jsonschema.SchemaError as exc:
            raise ProtocolViolation(f"tool {self.name!r}: invalid input schema: {exc.message}") from exc

    def validate_args(self, args: dict) -> None:
        """Raise SchemaViolation when ``args`` does not satisfy the input schema."""
        validator = jsonschema.Draft202012Validator(self.input_schema)
        errors = sorted(validator.iter_errors(args), key=lambda e: list(e.absolute_path))
        if errors:
            first = errors[0]
            where = "/".join(str(p) for p in first.absolute_path) or "<root>"
            raise SchemaViolation(f"args invalid at {where}: {first.message}")

    def to_wire(self) -> dict:
        return {"name": self.name, "description": self.description, "inputSchema": self.input_schema}

    @classmethod
    def from_wire(cls, obj: dict) -> "ToolDescriptor":
        if "name" not in obj:
            raise ProtocolViolation("tool descriptor missing name")
        return cls(
            name=obj["name"],
            description=obj.get("description", ""),
            input_schema=obj.get("inputSchema", {"type": "object"}),
        )


def text_part(text: str) -> dict:
    return {"kind": "text", "body": text}


def json_part(value: Any) -> dict:
    return {"kind": "json", "body": value}


@dataclass
class ToolResult:
    """Outcome of one tool invocation: ordered content parts plus an error flag."""

    content: list[dict]
    is_error: bool = False

    def __post_init__(self) -> None:
        if not self.content:
            raise ProtocolViolation("tool result content must be non-empty")
        for part in self.content:
            if part.get("kind") not in ("text", "json"):
                raise ProtocolViolation(f"unknown content part kind {part.get('kind')!r}")

    @property
    def first_text(self) -> str:
        """Text of the first part; JSON parts are rendered compactly."""
        part = self.content[0]
        if part["kind"] == "text":
            return part["body"]
        import json as _json

        return _json.dumps(part["body"], ensure_ascii=False, separators=(",", ":"))

    @property
    def first_json(self) -> Any:
        """Body of the first json part, or None when there is none."""
        for part in self.content:
            if part["kind"] == "json":
                return part["body"]
        return None

    def to_wire(self) -> dict:
        parts = []
        for part in self.content:
            if part["kind"] == "text":
                parts.append({"type": "text", "text": part["body"]})
            else:
                parts.append({"type": "json", "json": part["body"]})
        return {"content": parts, "isError": self.is_error}

    @classmethod
    def from_wire(cls, obj: dict) -> "ToolResult":
        if "content" not in obj:
            raise ProtocolViolation("tool result missing content")
        content = []
        for part in obj["content"]:
            if part.get("type") == "text":
                content.append(text_part(part.get("text", "")))
            elif part.get("type") == "json":
                content.append(json_part(part.get("json")))
            else:
                raise ProtocolViolation(f"unknown wire content type {part.get('type')!r}")
        return cls(content=content, is_error=bool(obj.get("isError", False)))


def ok_text(text: str) -> ToolResult:
    return ToolResult(content=[text_part(text)])


def ok_json(value: Any) -> ToolResult:
    return ToolResult(content=[json_part(value)])


def failed(message: str, detail: Any = None) -> ToolResult:
    """Build an is_error result whose first part explains the failure."""
    content = [text_part(message)]
    if detail is not None:
        content.append(json_part(detail))
    return ToolResult(content=content, is_error=True)
