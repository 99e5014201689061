"""Orchestra server: the planner itself, exposed as callable tools.

Stateless between calls — the whole pipeline context travels in the params —
so one instance can serve many sessions and the planner is as replaceable as
any other server.
"""

from __future__ import annotations

from ..orchestra import ActionPlan, plan_next, validate_plan
from ..protocol.server import ToolServer
from ..protocol.tools import ToolDescriptor, ok_json
from ..state import ExecutionHistory, PipelineState

_AVAILABLE_SCHEMA = {
    "type": "array",
    "minItems": 1,
    "items": {"type": "object", "required": ["name"]},
}


def build_orchestra_server(backend) -> ToolServer:
    server = ToolServer("orchestra")

    @server.tool(
        "plan_next",
        "Choose the next tool steps for the pipeline from its history, current "
        "state, and the formal descriptions of the available tools.",
        {
            "type": "object",
            "required": ["context", "available"],
            "properties": {
                "context": {"type": "object"},
                "history": {"type": "object"},
                "available": _AVAILABLE_SCHEMA,
                "max_layers": {"type": "integer", "minimum": 1},
            },
        },
    )
    def plan_next_tool(args: dict):
        context = PipelineState.from_dict(args["context"])
        if "history" in args:
            context.history = ExecutionHistory.from_dict(args["history"])
        available = [ToolDescriptor.from_wire(d) for d in args["available"]]
        plan = plan_next(context.history, context, available, backend,
                         max_layers=args.get("max_layers", 3))
        return ok_json({"plan": plan.to_dict()})

    @server.tool(
        "validate_plan",
        "Check a plan against the available tools; empty violation list means "
        "the plan is executable.",
        {
            "type": "object",
            "required": ["plan", "available"],
            "properties": {
                "plan": {"type": "object"},
                "available": _AVAILABLE_SCHEMA,
            },
        },
    )
    def validate_plan_tool(args: dict):
        plan = ActionPlan.from_dict(args["plan"])
        available = [ToolDescriptor.from_wire(d) for d in args["available"]]
        violations = validate_plan(plan, available)
        return ok_json({"violations": [
            {"code": v.code, "detail": v.detail, "step_index": v.step_index}
            for v in violations
        ]})

    return server
