"""Planner core: turn history + context + tool descriptions into validated plans.

The backend answers with one JSON object describing the next tool steps; this
module extracts it, fills in the heavyweight arguments from pipeline state
(the backend names documents and options, not whole payloads), validates every
step against the tool schemas, and re-prompts with the validation error on
failure. ``transition`` is the pure state-update function applied after every
executed step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .errors import IllegalTransition, PlanningFailed, SchemaViolation
from .model import PromptRequest
from .prompts import ORCHESTRA_PLAN
from .protocol.tools import ToolDescriptor, ToolResult
from .state import (
    Digest,
    PipelineState,
    RefinementReport,
    RevisionPlan,
    Skeleton,
    truncate_words,
)

MAX_PLANNER_STEPS = 50
MAX_REFINE_LAYERS = 3
PLAN_REPROMPTS = 2
COVERAGE_STOP = 0.99
MIN_LAYER_GAIN = 0.02
HISTORY_WINDOW = 10


@dataclass
class PlanStep:
    tool_name: str
    args: dict = field(default_factory=dict)
    rationale: str = ""

    def to_dict(self) -> dict:
        return {"tool_name": self.tool_name, "args": self.args, "rationale": self.rationale}

    @classmethod
    def from_dict(cls, obj: dict) -> "PlanStep":
        return cls(tool_name=obj["tool_name"], args=dict(obj.get("args") or {}),
                   rationale=obj.get("rationale", ""))


@dataclass
class ActionPlan:
    steps: list[PlanStep] = field(default_factory=list)
    stop: bool = False
    attempts: list[str] = field(default_factory=list)  # re-prompt errors, for the journal

    def to_dict(self) -> dict:
        return {"steps": [s.to_dict() for s in self.steps], "stop": self.stop,
                "attempts": list(self.attempts)}

    @classmethod
    def from_dict(cls, obj: dict) -> "ActionPlan":
        return cls(steps=[PlanStep.from_dict(s) for s in obj.get("steps", [])],
                   stop=bool(obj.get("stop", False)),
                   attempts=list(obj.get("attempts", [])))


@dataclass(frozen=True)
class PlanViolation:
    code: str
    detail: str
    step_index: Optional[int] = None

    def __str__(self) -> str:
        where = f" (step {self.step_index})" if self.step_index is not None else ""
        return f"{self.code}{where}: {self.detail}"


def extract_json_object(text: str) -> dict:
    """First balanced JSON object in ``text``; tolerates surrounding prose."""
    start = text.find("{")
    while start != -1:
        depth, in_string, escaped = 0, False, False
        for position in range(start, len(text)):
            char = text[position]
            if in_string:
                if escaped:
                    escaped = False
                elif char == "\\":
                    escaped = True
                elif char == '"':
                    in_string = False
                continue
            if char == '"':
                in_string = True
            elif char == "{":
                depth += 1
            elif char == "}":
                depth -= 1
                if depth == 0:
                    candidate = text[start:position + 1]
                    try:
                        parsed = json.loads(candidate)
                    except json.JSONDecodeError:
                        break
                    if isinstance(parsed, dict):
                        return parsed
                    break
        start = text.find("{", start + 1)
    raise ValueError("no balanced JSON object found in backend output")


# --- plan synthesis ---------------------------------------------------------

def plan_variables(state: PipelineState, available: list[ToolDescriptor],
                   error: Optional[str] = None,
                   max_layers: int = MAX_REFINE_LAYERS) -> dict:
    """Prompt variables for one planning consult. All values are strings so
    the scripted fixture key is stable."""
    digested = {d.doc_id for d in state.digests}
    corpus_ids = list(state.tree.documents) if state.tree else []
    gain = state.last_layer_gain()
    recent = [
        {"seq": e.seq, "tool": e.tool_name, "ok": e.ok, "summary": e.result_summary}
        for e in state.history.entries[-HISTORY_WINDOW:]
    ]
    if error:
        recent.append({"validation_error": error})
    return {
        "stage": state.stage,
        "available": json.dumps([d.to_wire() for d in available]),
        "has_skeleton": "true" if state.skeleton else "false",
        "corpus_size": str(len(corpus_ids)),
        "digest_count": str(len(digested & set(corpus_ids)) if corpus_ids else len(digested)),
        "has_plan": "true" if state.plan else "false",
        "coverage": f"{state.coverage():.4f}",
        "layers_run": str(state.refine_layers_run()),
        "max_layers": str(max_layers),
        "last_gain": "none" if gain is None else f"{gain:.4f}",
        "user_feedback": state.pending_feedback,
        "missing_doc_ids": json.dumps([d for d in corpus_ids if d not in digested]),
        "history": json.dumps(recent),
    }


def hydrate_step(step: PlanStep, state: PipelineState) -> PlanStep:
    """Expand a planned step's logical args into the full tool payload.

    The backend references state by name (a doc_id, a feedback string); the
    heavy structures live in PipelineState and are injected here, right
    before schema validation.

    Raises ValueError when a referenced entity does not exist.
    """
    args = dict(step.args)
    name = step.tool_name
    if name.endswith(".init") and name.split(".")[0] in ("skeleton_init", "skeleton"):
        if state.tree is None:
            raise ValueError("cannot initialize a skeleton before the reference tree exists")
        args = {
            "topic": state.brief.topic if state.brief else state.tree.topic,
            "brief": state.brief.to_dict() if state.brief else {"topic": state.tree.topic},
            "tree": state.tree.to_dict(),
        }
    elif name == "digest.make":
        doc_id = args.pop("doc_id", None) or (args.get("document") or {}).get("doc_id")
        if state.tree is None or doc_id not in state.tree.documents:
            raise ValueError(f"digest.make references unknown document {doc_id!r}")
        if state.skeleton is None:
            raise ValueError("digest.make needs an initialized skeleton")
        args = {
            "document": state.tree.documents[doc_id].to_dict(),
            "skeleton": state.skeleton.to_dict(),
        }
    elif name == "digest.consolidate":
        if not state.digests:
            raise ValueError("digest.consolidate needs at least one digest")
        if state.skeleton is None:
            raise ValueError("digest.consolidate needs an initialized skeleton")
        args = {
            "digests": [d.to_dict() for d in state.digests],
            "skeleton": state.skeleton.to_dict(),
            "corpus_doc_ids": sorted(state.tree.doc_ids()) if state.tree else [],
        }
    elif name == "refine.step":
        if state.skeleton is None or state.tree is None:
            raise ValueError("refine.step needs a skeleton and a reference tree")
        feedback = args.get("feedback", "") or state.pending_feedback
        args = {
            "skeleton": state.skeleton.to_dict(),
            "tree": state.tree.to_dict(),
            "layer_index": state.refine_layers_run() + 1,
        }
        if feedback:
            args["feedback"] = feedback
        elif state.plan is not None:
            args["plan"] = state.plan.to_dict()
    return PlanStep(tool_name=name, args=args, rationale=step.rationale)


def validate_plan(plan: ActionPlan, available: list[ToolDescriptor]) -> list[PlanViolation]:
    """All invariant violations of a plan against the available tools; total."""
    violations: list[PlanViolation] = []
    if not plan.steps and not plan.stop:
        violations.append(PlanViolation("empty_plan", "plan has no steps and stop is false"))
    by_name = {d.name: d for d in available}
    for index, step in enumerate(plan.steps):
        descriptor = by_name.get(step.tool_name)
        if descriptor is None:
            violations.append(PlanViolation(
                "unknown_tool", f"{step.tool_name!r} is not an available tool", index))
            continue
        try:
            descriptor.validate_args(step.args)
        except SchemaViolation as exc:
            violations.append(PlanViolation("schema_violation", str(exc), index))
    return violations


def plan_next(history, context: PipelineState, available: list[ToolDescriptor],
              backend, max_layers: int = MAX_REFINE_LAYERS) -> ActionPlan:
    """One planning consult: prompt, extract, hydrate, validate; re-prompt with
    the validation error embedded up to PLAN_REPROMPTS times, then fail."""
    if not available:
        raise PlanningFailed("no tools available to plan over")
    attempts: list[str] = []
    error: Optional[str] = None
    for _ in range(1 + PLAN_REPROMPTS):
        variables = plan_variables(context, available, error=error, max_layers=max_layers)
        completion = backend.complete(PromptRequest(template_id=ORCHESTRA_PLAN,
                                                    variables=variables))
        try:
            raw = extract_json_object(completion.text)
            drafted = ActionPlan(
                steps=[PlanStep.from_dict(s) for s in raw.get("steps", [])],
                stop=bool(raw.get("stop", False)),
            )
            hydrated = ActionPlan(
                steps=[hydrate_step(s, context) for s in drafted.steps],
                stop=drafted.stop,
            )
        except (ValueError, KeyError, TypeError) as exc:
            error = f"unusable plan: {exc}"
            attempts.append(error)
            continue
        violations = validate_plan(hydrated, available)
        if not violations:
            hydrated.attempts = attempts
            return hydrated
        error = "; ".join(str(v) for v in violations)
        attempts.append(error)
    raise PlanningFailed(
        f"no valid plan after {PLAN_REPROMPTS} re-prompts: {attempts[-1]}")


# --- state transition -------------------------------------------------------

# Which pipeline stage each server's tools belong to. Tools from servers not
# listed here (user-defined extensions) are legal in any stage.
SERVER_STAGE = {
    "search": "analysis",
    "group": "analysis",
    "skeleton_init": "skeletonizing",
    "skeleton": "skeletonizing",
    "digest": "skeletonizing",
    "refine": "skeletonizing",
    "orchestra": "skeletonizing",
    "figure": "writing",
}


@dataclass(frozen=True)
class ExecutedStep:
    """What actually ran: identity, arguments digest, and journal metadata."""

    tool_name: str
    args_hash: str
    agent_id: str
    timestamp: float
    rationale: str = ""


def summarize_result(result: ToolResult) -> str:
    body = result.first_json
    if body is None:
        return truncate_words(result.first_text)
    if isinstance(body, dict):
        keys = ", ".join(sorted(body))
        sizes = []
        for key in sorted(body):
            value = body[key]
            if isinstance(value, list):
                sizes.append(f"{key}[{len(value)}]")
        described = "; ".join(sizes) if sizes else keys
        return truncate_words(f"ok: {described}")
    return truncate_words(f"ok: {json.dumps(body)[:200]}")


def transition(state: PipelineState, step: ExecutedStep, result: ToolResult) -> PipelineState:
    """Successor state after one executed step. Pure: same inputs, same output.

    Failed results only journal; successful results update the stage-relevant
    fields for the tool that ran.
    """
    server_id = step.tool_name.split(".", 1)[0]
    expected_stage = SERVER_STAGE.get(server_id)
    if expected_stage is not None and expected_stage != state.stage:
        raise IllegalTransition(
            f"{step.tool_name} belongs to the {expected_stage} stage, "
            f"but the pipeline is in {state.stage}")

    successor = state.clone()
    successor.history.append(
        agent_id=step.agent_id,
        tool_name=step.tool_name,
        args_hash=step.args_hash,
        result_summary=("failed: " + truncate_words(result.first_text)
                        if result.is_error else summarize_result(result)),
        ok=not result.is_error,
        timestamp=step.timestamp,
    )
    if result.is_error:
        return successor

    body = result.first_json or {}
    base_name = step.tool_name.split(".", 1)[1] if "." in step.tool_name else step.tool_name
    if server_id in ("skeleton_init", "skeleton") and base_name == "init":
        successor.skeleton = Skeleton.from_dict(body["skeleton"])
    elif step.tool_name == "digest.make":
        digest = Digest.from_dict(body["digest"])
        successor.digests = [d for d in successor.digests if d.doc_id != digest.doc_id]
        successor.digests.append(digest)
    elif step.tool_name == "digest.consolidate":
        successor.plan = RevisionPlan.from_dict(body["plan"])
        if successor.skeleton is not None:
            attached = _attach_digests(successor.skeleton, successor.digests)
            if attached:
                successor.skeleton.version += 1
    elif step.tool_name == "refine.step":
        successor.skeleton = Skeleton.from_dict(body["skeleton"])
        successor.reports.append(RefinementReport.from_dict(body["report"]))
        successor.pending_feedback = ""
    return successor


def _attach_digests(skeleton: Skeleton, digests: list[Digest]) -> int:
    """Pin each digest to the node its first targeted suggestion names."""
    attached = 0
    for digest in digests:
        target_id = next(
            (s.target_node_id for s in digest.suggestions if s.target_node_id), None)
        if target_id is None:
            continue
        node = skeleton.find(target_id)
        if node is not None and digest.digest_id not in node.attached_digests:
            node.attached_digests.append(digest.digest_id)
            attached += 1
    return attached


def advance_stage(state: PipelineState, new_stage: str) -> PipelineState:
    """Move the pipeline forward (or re-enter skeletonizing from writing)."""
    from .state import STAGES

    current, target = STAGES.index(state.stage), STAGES.index(new_stage)
    if target < current and not (state.stage == "writing" and new_stage == "skeletonizing"):
        raise IllegalTransition(f"cannot move from {state.stage} back to {new_stage}")
    successor = state.clone()
    successor.stage = new_stage
    return successor
