"""Figure server: validate Mermaid diagram source and emit a fenced block."""

from __future__ import annotations

from ..errors import ToolFailed
from ..protocol.server import ToolServer
from ..protocol.tools import ok_text

DIAGRAM_KINDS = (
    "graph", "flowchart", "sequenceDiagram", "classDiagram", "stateDiagram",
    "stateDiagram-v2", "erDiagram", "gantt", "pie", "mindmap", "timeline",
    "journey", "quadrantChart",
)

_PAIRS = {")": "(", "]": "[", "}": "{"}
_OPENERS = set(_PAIRS.values())


def check_diagram(source: str) -> None:
    """Syntactic sanity check: known kind on the first line, brackets balanced.

    Raises ToolFailed naming the offending line; not a full Mermaid parser.
    """
    lines = source.splitlines()
    first_content = next(
        ((i, line) for i, line in enumerate(lines, start=1) if line.strip()), None)
    if first_content is None:
        raise ToolFailed("empty diagram source")
    line_no, line = first_content
    kind = line.strip().split()[0].rstrip(";")
    if kind not in DIAGRAM_KINDS:
        raise ToolFailed(
            f"line {line_no}: unknown diagram kind {kind!r}; "
            f"expected one of {', '.join(DIAGRAM_KINDS[:4])}, ...")
    stack: list[tuple[str, int]] = []
    for number, text in enumerate(lines, start=1):
        if text.lstrip().startswith("%%"):  # comment line
            continue
        for char in text:
            if char in _OPENERS:
                stack.append((char, number))
            elif char in _PAIRS:
                if not stack or stack[-1][0] != _PAIRS[char]:
                    raise ToolFailed(f"line {number}: unmatched {char!r}")
                stack.pop()
    if stack:
        char, number = stack[-1]
        raise ToolFailed(f"line {number}: unclosed {char!r}")


def build_figure_server() -> ToolServer:
    server = ToolServer("figure")

    @server.tool(
        "render_mermaid",
        "Sanity-check Mermaid diagram source and return it as a fenced block "
        "ready for embedding.",
        {
            "type": "object",
            "required": ["source"],
            "properties": {"source": {"type": "string"}},
        },
    )
    def render_mermaid(args: dict):
        source = args["source"].strip("\n")
        check_diagram(source)
        return ok_text(f"```mermaid\n{source}\n```")

    return server
