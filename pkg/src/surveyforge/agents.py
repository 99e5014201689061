"""The three specialized agents and the session loop that binds them.

A session walks the pipeline stages — consensus dialogue, reference analysis,
orchestrated skeletonizing, writing — with an enforced agent-to-server map:
each agent can only reach the servers it is bound to, checked before any
transport activity. Gates park the session for human decisions; headless mode
auto-approves them so full runs are reproducible.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import (
    AccessDenied,
    ConsensusAbandoned,
    GateRejectedLimit,
    PlanningFailed,
    RetrieverUnavailable,
    ToolFailed,
)
from .model import PromptRequest
from .orchestra import (
    ActionPlan,
    ExecutedStep,
    MAX_PLANNER_STEPS,
    MAX_REFINE_LAYERS,
    advance_stage,
    transition,
)
from .prompts import (
    CONSENSUS_BRIEF,
    CONSENSUS_QUESTION,
    WRITING_SECTION,
)
from .protocol.client import ServerHandle, connect_in_process
from .protocol.compose import compose, owning_server
from .protocol.tools import ToolResult, ok_text
from .state import (
    PipelineState,
    ReferenceDocument,
    ReferenceGroup,
    ResearchBrief,
    build_reference_tree,
    hash_args,
    snapshot,
    restore,
)

AGENT_IDS = ("analysis", "skeleton", "writing")

# Default agent-to-server map. Config may extend it, but an agent must never
# end up with no servers for its active stage.
DEFAULT_BINDINGS: dict[str, frozenset] = {
    "analysis": frozenset({"search", "group"}),
    "skeleton": frozenset({"skeleton_init", "digest", "refine", "orchestra"}),
    "writing": frozenset({"figure"}),
}


@dataclass(frozen=True)
class AgentBinding:
    agent_id: str
    servers: frozenset

    def allows(self, tool_name: str) -> bool:
        return owning_server(tool_name) in self.servers


class BindingTable:
    """The authorization map consulted before every tool call."""

    def __init__(self, bindings: Optional[dict[str, set]] = None):
        merged = {agent: set(servers) for agent, servers in DEFAULT_BINDINGS.items()}
        for agent, servers in (bindings or {}).items():
            merged.setdefault(agent, set()).update(servers)
        self._bindings = {agent: AgentBinding(agent, frozenset(servers))
                          for agent, servers in merged.items()}

    def binding(self, agent_id: str) -> Optional[AgentBinding]:
        return self._bindings.get(agent_id)

    def authorize(self, agent_id: str, tool_name: str) -> bool:
        binding = self._bindings.get(agent_id)
        return binding is not None and binding.allows(tool_name)


# --- clocks -----------------------------------------------------------------

class WallClock:
    def now(self) -> float:
        return time.time()


class TickClock:
    """Deterministic logical timestamps: 1.0, 2.0, ... continuing across resume."""

    def __init__(self, start_after: float = 0.0):
        self._last = float(start_after)

    def now(self) -> float:
        self._last = float(int(self._last) + 1)
        return self._last


# --- gates ------------------------------------------------------------------

GATE_OPTIONS = ("approve", "revise", "regenerate")


@dataclass
class GateRequest:
    gate_id: str
    stage: str
    payload: dict
    options: tuple = GATE_OPTIONS


@dataclass
class GateResolution:
    action: str  # approve | revise | regenerate | abandon
    text: str = ""


class HeadlessGateHandler:
    """Auto-approves everything; the CI and acceptance path."""

    def resolve(self, gate: GateRequest) -> GateResolution:
        return GateResolution(action="approve")


class ScriptedGateHandler:
    """Resolves gates from a queue; used to script reviewer behavior in tests."""

    def __init__(self, resolutions: list[GateResolution]):
        self._queue = list(resolutions)

    def resolve(self, gate: GateRequest) -> GateResolution:
        if not self._queue:
            return GateResolution(action="approve")
        return self._queue.pop(0)


class InteractiveGateHandler:
    """Terminal prompts; EOF or 'quit' abandons the session."""

    def __init__(self, stdin=None, stdout=None):
        import sys

        self._stdin = stdin or sys.stdin
        self._stdout = stdout or sys.stdout

    def resolve(self, gate: GateRequest) -> GateResolution:
        self._stdout.write(f"\n[{gate.stage} gate] {json.dumps(gate.payload, indent=2)}\n")
        self._stdout.write("approve / revise <text> / regenerate / quit > ")
        self._stdout.flush()
        line = self._stdin.readline()
        if not line or line.strip().lower() in ("quit", "q"):
            return GateResolution(action="abandon")
        command = line.strip()
        if command.lower().startswith("revise"):
            return GateResolution(action="revise", text=command[len("revise"):].strip())
        if command.lower() == "regenerate":
            return GateResolution(action="regenerate")
        return GateResolution(action="approve")


class QueueGateHandler:
    """Parks the session thread until another thread resolves the gate.

    The service wires submit_feedback to ``resolve``; exactly one resolution
    per gate is accepted.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._pending: Optional[GateRequest] = None
        self._resolution: Optional[GateResolution] = None
        self._resolved = threading.Event()

    @property
    def pending(self) -> Optional[GateRequest]:
        with self._lock:
            return self._pending

    def resolve(self, gate: GateRequest) -> GateResolution:
        with self._lock:
            self._pending = gate
            self._resolution = None
            self._resolved.clear()
        self._resolved.wait()
        with self._lock:
            resolution = self._resolution
            self._pending = None
            return resolution

    def submit(self, gate_id: str, resolution: GateResolution) -> bool:
        """Resolve the pending gate; False when ids do not match or none pending."""
        with self._lock:
            if self._pending is None or self._pending.gate_id != gate_id:
                return False
            if self._resolution is not None:
                return False
            self._resolution = resolution
            self._resolved.set()
            return True


# --- session ----------------------------------------------------------------

@dataclass
class SessionOptions:
    topic: str
    session_dir: Optional[str] = None
    uploads: list[dict] = field(default_factory=list)
    headless: bool = True
    max_planner_steps: int = MAX_PLANNER_STEPS
    max_refine_layers: int = MAX_REFINE_LAYERS
    max_consensus_turns: int = 8
    max_gate_rejections: int = 5
    retrieve_limit: int = 12
    filter_threshold: Optional[float] = None
    target_groups: Optional[int] = None
    insert_figure: bool = True


EventSink = Callable[[str, dict], None]


class Session:
    """One survey pipeline run: agents, servers, state, gates, artifacts."""

    def __init__(self, options: SessionOptions, backend, index=None,
                 handles: Optional[dict[str, ServerHandle]] = None,
                 bindings: Optional[BindingTable] = None,
                 gate_handler=None, clock=None,
                 event_sink: Optional[EventSink] = None,
                 state: Optional[PipelineState] = None):
        if not options.topic.strip():
            raise ValueError("session topic must be non-empty")
        self.options = options
        self.backend = backend
        self.bindings = bindings or BindingTable()
        self.gate_handler = gate_handler or HeadlessGateHandler()
        self.clock = clock or (TickClock() if getattr(backend, "name", "") == "scripted"
                               else WallClock())
        self.event_sink = event_sink or (lambda kind, payload: None)
        self.state = state or PipelineState(brief=ResearchBrief(topic=options.topic))
        self._gate_counter = 0
        self._rejections = 0
        self._written_skeleton_versions: set[int] = set()
        # Planner-scheduled steps already executed (relevant after resume): the
        # budget is per session, not per process.
        self._steps_run = sum(
            1 for e in self.state.history.entries
            if owning_server(e.tool_name) in ("skeleton_init", "digest", "refine"))

        if handles is None:
            handles = _default_handles(backend, index)
        self.handles = handles
        # One composed suite per agent: the union of its servers' tools under
        # qualified names. The suite is what the agent actually talks to.
        self.suites: dict[str, ServerHandle] = {}
        for agent_id in AGENT_IDS:
            binding = self.bindings.binding(agent_id)
            children = [handles[s] for s in sorted(binding.servers) if s in handles]
            self.suites[agent_id] = compose(f"{agent_id}-suite", children)

        if options.session_dir:
            os.makedirs(options.session_dir, exist_ok=True)

    # -- plumbing ------------------------------------------------------------

    def emit(self, kind: str, payload: dict) -> None:
        self.event_sink(kind, payload)

    def _artifact_path(self, name: str) -> Optional[str]:
        if not self.options.session_dir:
            return None
        return os.path.join(self.options.session_dir, name)

    def _write_artifact(self, name: str, content) -> None:
        path = self._artifact_path(name)
        if path is None:
            return
        if isinstance(content, str):
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(content)
        else:
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(content, fh, ensure_ascii=False, indent=2, sort_keys=True)
                fh.write("\n")
        self.emit("artifact_ready", {"name": name})

    def _write_transcript(self) -> None:
        path = self._artifact_path("transcript.jsonl")
        if path is None:
            return
        lines = [json.dumps(e.to_dict(), ensure_ascii=False, sort_keys=True)
                 for e in self.state.history.entries]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))

    def checkpoint(self) -> None:
        seq = len(self.state.history.entries)
        self._write_artifact(f"state-{seq}.json", snapshot(self.state))
        self._write_transcript()

    def _advance(self, stage: str) -> None:
        self.state = advance_stage(self.state, stage)
        self.emit("stage_changed", {"stage": stage})
        self.checkpoint()

    def call_tool(self, agent_id: str, tool_name: str, args: dict) -> ToolResult:
        """φ-checked tool invocation: denial happens before the suite transport
        sees anything, then the executed step flows through ``transition``."""
        if not self.bindings.authorize(agent_id, tool_name):
            raise AccessDenied(f"agent {agent_id!r} may not call {tool_name!r}")
        suite = self.suites[agent_id]
        self.emit("tool_started", {"agent": agent_id, "tool": tool_name})
        result = suite.call_tool(tool_name, args, raise_on_error=False)
        step = ExecutedStep(tool_name=tool_name, args_hash=hash_args(args),
                            agent_id=agent_id, timestamp=self.clock.now())
        self.state = transition(self.state, step, result)
        entry = self.state.history.entries[-1]
        self.emit("tool_finished", {"agent": agent_id, "tool": tool_name,
                                    "ok": entry.ok, "summary": entry.result_summary})
        return result

    def _complete(self, agent_id: str, template_id: str, variables: dict) -> str:
        """Backend completion journaled like a tool call (tool name ``llm:<id>``)."""
        completion = self.backend.complete(PromptRequest(template_id=template_id,
                                                         variables=variables))
        step = ExecutedStep(tool_name=f"llm:{template_id}", args_hash=hash_args(variables),
                            agent_id=agent_id, timestamp=self.clock.now())
        self.state = transition(self.state, step, ok_text(completion.text))
        return completion.text

    def _journal(self, agent_id: str, name: str, summary: str, ok: bool = True) -> None:
        step = ExecutedStep(tool_name=name, args_hash=hash_args({}),
                            agent_id=agent_id, timestamp=self.clock.now())
        self.state = transition(self.state, step,
                                ToolResult(content=[{"kind": "text", "body": summary}],
                                           is_error=not ok))

    def _gate(self, stage: str, payload: dict) -> GateResolution:
        self._gate_counter += 1
        gate = GateRequest(gate_id=f"gate-{self._gate_counter}", stage=stage, payload=payload)
        self.emit("gate_opened", {"gate_id": gate.gate_id, "stage": stage, "payload": payload})
        resolution = self.gate_handler.resolve(gate)
        self.emit("gate_resolved", {"gate_id": gate.gate_id, "action": resolution.action,
                                    "text": resolution.text})
        self._journal("analysis" if stage == "consensus" else "skeleton",
                      f"gate.{stage}", f"{resolution.action}"
                      + (f": {resolution.text}" if resolution.text else ""))
        return resolution

    # -- stage drivers -------------------------------------------------------

    def run(self) -> PipelineState:
        """Drive the pipeline from its current stage to completion."""
        try:
            while self.state.stage != "done":
                if self.state.stage == "consensus":
                    self._run_consensus()
                elif self.state.stage == "analysis":
                    self._run_analysis()
                elif self.state.stage == "skeletonizing":
                    self._run_skeletonizing()
                elif self.state.stage == "writing":
                    self._run_writing()
        except Exception as exc:
            self.emit("error", {"error": type(exc).__name__, "message": str(exc)})
            raise
        return self.state

    def _run_consensus(self) -> None:
        """Multi-turn scoping dialogue, capped, ending in an agreed brief."""
        topic = self.options.topic
        for turn in range(1, self.options.max_consensus_turns + 1):
            question = self._complete("analysis", CONSENSUS_QUESTION, {
                "topic": topic,
                "turn": str(turn),
                "dialogue": json.dumps(self.state.dialogue),
            })
            resolution = self._gate("consensus", {"question": question, "turn": turn})
            if resolution.action == "abandon":
                raise ConsensusAbandoned("user abandoned the scoping dialogue")
            if resolution.action == "approve":
                break
            if resolution.action == "revise":
                self.state.dialogue.append({"question": question, "answer": resolution.text})
            # regenerate: ask again next turn with the same dialogue
        brief_text = self._complete("analysis", CONSENSUS_BRIEF, {
            "topic": topic,
            "dialogue": json.dumps(self.state.dialogue),
        })
        try:
            drafted = json.loads(brief_text)
        except json.JSONDecodeError:
            drafted = {}
        perspectives = [p for p in drafted.get("perspectives", []) if isinstance(p, str) and p.strip()]
        if not perspectives:
            perspectives = [f"methods and architectures for {topic}", f"evaluation of {topic}"]
        self.state.brief = ResearchBrief(
            topic=topic,
            goals=str(drafted.get("goals") or f"Survey the state of research on {topic}."),
            perspectives=perspectives,
            search_strategy=str(drafted.get("search_strategy") or ""),
        )
        self._write_artifact("brief.json", self.state.brief.to_dict())
        self._advance("analysis")

    def _run_analysis(self) -> None:
        """Queries, retrieval, crawling, filtering, upload merge, grouping."""
        brief = self.state.brief
        topic = brief.topic

        uploads: list[ReferenceDocument] = []
        for position, upload in enumerate(self.options.uploads, start=1):
            uploads.append(ReferenceDocument.create(
                title=upload.get("title") or f"Upload {position}",
                body=upload["body"],
                source=upload.get("filename") or f"upload-{position}",
            ))

        queries_result = self.call_tool("analysis", "search.generate_queries", {
            "topic": topic, "perspectives": brief.perspectives,
        })
        queries = queries_result.first_json["queries"]

        retrieved: dict[str, dict] = {}
        for query in queries:
            hits = self.call_tool("analysis", "search.retrieve", {
                "query": query, "limit": self.options.retrieve_limit,
            })
            if hits.is_error:
                raise _search_error(hits)
            for hit in hits.first_json["results"]:
                if hit["url"] in retrieved:
                    continue
                crawled = self.call_tool("analysis", "search.crawl", {
                    "url": hit["url"], "query": query,
                })
                if crawled.is_error:
                    continue  # journaled; a dead link is not fatal
                retrieved[hit["url"]] = crawled.first_json["document"]

        corpus: list[ReferenceDocument] = list(uploads)
        if retrieved:
            filter_args = {"documents": list(retrieved.values()), "topic": topic}
            if self.options.filter_threshold is not None:
                filter_args["threshold"] = self.options.filter_threshold
            kept = self.call_tool("analysis", "search.similarity_filter", filter_args)
            upload_ids = {d.doc_id for d in uploads}
            for doc in kept.first_json["documents"]:
                if doc["doc_id"] not in upload_ids:
                    corpus.append(ReferenceDocument.from_dict(doc))
        if not corpus:
            raise ToolFailed("analysis produced an empty corpus: no uploads and no retrieval hits")

        cluster_args = {"documents": [d.to_dict() for d in corpus], "topic": topic}
        if self.options.target_groups is not None:
            cluster_args["target_groups"] = self.options.target_groups
        grouped = self.call_tool("analysis", "group.cluster_references", cluster_args)
        if grouped.is_error:
            raise ToolFailed(f"grouping failed: {grouped.first_text}")
        groups = [ReferenceGroup.from_dict(g) for g in grouped.first_json["groups"]]
        self.state.tree = build_reference_tree(topic, groups, corpus)
        self._write_artifact("tree.json", self.state.tree.to_dict())
        self._advance("skeletonizing")

    def _planner_toolset(self):
        """Descriptors the planner may schedule: the skeleton agent's suite
        minus the planner itself."""
        suite = self.suites["skeleton"]
        return [d for d in suite.list_tools() if owning_server(d.name) != "orchestra"]

    def _consult_planner(self, available) -> ActionPlan:
        consult = self.call_tool("skeleton", "orchestra.plan_next", {
            "context": self.state.to_dict(),
            "available": [d.to_wire() for d in available],
            "max_layers": self.options.max_refine_layers,
        })
        if consult.is_error:
            raise PlanningFailed(consult.first_text)
        plan = ActionPlan.from_dict(consult.first_json["plan"])
        for error in plan.attempts:
            self._journal("skeleton", "orchestra.replan", f"re-prompted: {error}", ok=False)
        return plan

    def _run_skeletonizing(self) -> None:
        """plan -> authorized calls -> transition, until the planner stops;
        then the outline gate, whose revisions re-enter the loop."""
        while True:
            available = self._planner_toolset()
            plan = self._consult_planner(available)
            if plan.stop:
                if self.state.skeleton is None:
                    raise PlanningFailed("planner stopped before initializing a skeleton")
                resolution = self._gate("outline", {
                    "skeleton": self.state.skeleton.to_dict(),
                    "coverage": self.state.coverage(),
                })
                if resolution.action == "approve":
                    break
                self._rejections += 1
                if self._rejections > self.options.max_gate_rejections:
                    raise GateRejectedLimit(
                        f"outline rejected {self._rejections} times, giving up")
                if resolution.action == "revise":
                    self.state.pending_feedback = resolution.text
                elif resolution.action == "regenerate":
                    self.state.skeleton = None
                    self.state.digests = []
                    self.state.plan = None
                    self.state.reports = []
                continue
            for step in plan.steps:
                if self._steps_run >= self.options.max_planner_steps:
                    raise PlanningFailed(
                        f"step budget exhausted after {self._steps_run} steps; "
                        f"history tail: {[e.tool_name for e in self.state.history.entries[-5:]]}")
                self.call_tool("skeleton", step.tool_name, step.args)
                self._steps_run += 1
                if (self.state.skeleton is not None
                        and self.state.skeleton.version not in self._written_skeleton_versions):
                    self._written_skeleton_versions.add(self.state.skeleton.version)
                    self._write_artifact(f"skeleton-v{self.state.skeleton.version}.json",
                                         self.state.skeleton.to_dict())
        self._advance("writing")

    def _run_writing(self) -> None:
        """Depth-first section synthesis, citation repair, references, figure."""
        state = self.state
        skeleton = state.skeleton
        topic = state.brief.topic
        summaries = {d.doc_id: d.summary for d in state.digests}

        figure_block = ""
        if self.options.insert_figure and state.tree is not None:
            source_lines = ["graph TD", f'  T["{_mermaid_text(topic)}"]']
            for group in state.tree.groups:
                source_lines.append(
                    f'  T --> {group.group_id.upper()}'
                    f'["{_mermaid_text(group.label)} ({len(group.member_ids)} refs)"]')
            rendered = self.call_tool("writing", "figure.render_mermaid",
                                      {"source": "\n".join(source_lines)})
            if not rendered.is_error:
                figure_block = rendered.first_text

        blocks: list[str] = [f"# {skeleton.title}", ""]
        first_section = True
        for node, depth, _ in skeleton.walk():
            docs_payload = []
            for doc_id in node.citation_slots:
                document = state.tree.documents.get(doc_id)
                if document is None:
                    continue
                summary = summaries.get(doc_id) or " ".join(document.body.split()[:45])
                docs_payload.append({"doc_id": doc_id, "title": document.title,
                                     "summary": summary})
            text = self._complete("writing", WRITING_SECTION, {
                "topic": topic,
                "heading": node.heading,
                "intent": node.intent,
                "docs": json.dumps(docs_payload),
            })
            blocks.append("#" * (depth + 1) + " " + node.heading)
            blocks.append("")
            blocks.append(text.strip())
            if first_section and figure_block:
                blocks.append("")
                blocks.append(figure_block)
            first_section = False
            blocks.append("")

        document_text = "\n".join(blocks)
        document_text, ordered_citations, dropped = _resolve_citations(
            document_text, set(state.tree.documents))
        if dropped:
            self._journal("writing", "writing.citation_repair",
                          "warning: dropped unknown citation tokens: " + ", ".join(dropped))

        references = ["## References", ""]
        for number, doc_id in enumerate(ordered_citations, start=1):
            document = state.tree.documents[doc_id]
            references.append(f"[{number}] {document.title} — {document.source}")
        document_text = document_text.rstrip() + "\n\n" + "\n".join(references) + "\n"

        # self.state was replaced by every transition above; set the survey on
        # the live object, not the entry snapshot.
        self.state.survey = document_text
        self._write_artifact("survey.md", document_text)
        self._advance("done")


def _search_error(result: ToolResult) -> Exception:
    message = result.first_text
    if "retriever unavailable" in message.lower():
        return RetrieverUnavailable(message)
    return ToolFailed(message)


def _mermaid_text(text: str) -> str:
    return re.sub(r'[\[\]{}()"]', "", text)


CITATION_TOKEN = re.compile(r" ?\[@([^\]\s]+)\]")


def _resolve_citations(text: str, known_ids: set[str]) -> tuple[str, list[str], list[str]]:
    """Replace [@doc_id] tokens with [n] numbers in first-appearance order.

    Unknown ids are dropped from the text and reported, never kept silently.
    """
    ordered: list[str] = []
    dropped: list[str] = []

    def substitute(match: re.Match) -> str:
        doc_id = match.group(1)
        if doc_id not in known_ids:
            if doc_id not in dropped:
                dropped.append(doc_id)
            return ""
        if doc_id not in ordered:
            ordered.append(doc_id)
        return f" [{ordered.index(doc_id) + 1}]"

    return CITATION_TOKEN.sub(substitute, text), ordered, dropped


def _default_handles(backend, index=None) -> dict[str, ServerHandle]:
    from .retrieval import load_fixture_index
    from .servers import SERVER_NAMES, build_server

    if index is None:
        index = load_fixture_index()
    return {name: connect_in_process(build_server(name, backend=backend, index=index))
            for name in SERVER_NAMES}


# --- entry points -----------------------------------------------------------

def create_session(options: SessionOptions, backend=None, index=None,
                   gate_handler=None, bindings=None,
                   event_sink: Optional[EventSink] = None) -> Session:
    from .model import ScriptedBackend

    return Session(
        options=options,
        backend=backend or ScriptedBackend(),
        index=index,
        gate_handler=gate_handler,
        bindings=bindings,
        event_sink=event_sink,
    )


def resume_session(options: SessionOptions, backend=None, index=None,
                   gate_handler=None, bindings=None,
                   event_sink: Optional[EventSink] = None) -> Session:
    """Rebuild a session from the latest checkpoint in its directory."""
    from .model import ScriptedBackend

    state = load_latest_checkpoint(options.session_dir)
    backend = backend or ScriptedBackend()
    clock = None
    if getattr(backend, "name", "") == "scripted":
        last = max((e.timestamp for e in state.history.entries), default=0.0)
        clock = TickClock(start_after=last)
    session = Session(
        options=options,
        backend=backend,
        index=index,
        gate_handler=gate_handler,
        bindings=bindings,
        event_sink=event_sink,
        clock=clock,
        state=state,
    )
    session._written_skeleton_versions = set(range(1, (state.skeleton.version + 1)
                                                   if state.skeleton else 1))
    return session


def load_latest_checkpoint(session_dir: str) -> PipelineState:
    pattern = re.compile(r"^state-(\d+)\.json$")
    best: Optional[tuple[int, str]] = None
    for name in os.listdir(session_dir):
        match = pattern.match(name)
        if match:
            seq = int(match.group(1))
            if best is None or seq > best[0]:
                best = (seq, name)
    if best is None:
        raise FileNotFoundError(f"no checkpoints under {session_dir}")
    with open(os.path.join(session_dir, best[1]), encoding="utf-8") as fh:
        return restore(json.load(fh))
