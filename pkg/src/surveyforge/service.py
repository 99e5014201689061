"""Session-facing HTTP API.

Creates pipeline sessions, streams their events over SSE, surfaces parked
gates, accepts gate resolutions, and serves stored artifacts. The API is a
view over session state: only session creation and feedback mutate anything.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import dataclass
from typing import Iterator, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response, StreamingResponse

from .agents import (
    GateResolution,
    HeadlessGateHandler,
    QueueGateHandler,
    Session,
    SessionOptions,
)
from .errors import (
    ArtifactNotReady,
    GateAlreadyResolved,
    NoSuchGate,
    NoSuchSession,
)

EVENT_KINDS = ("stage_changed", "tool_started", "tool_finished",
               "gate_opened", "gate_resolved", "artifact_ready", "error")

ARTIFACT_KINDS = ("brief", "tree", "skeleton", "survey", "transcript")


@dataclass
class SessionEvent:
    seq: int
    kind: str
    payload: dict

    def to_dict(self) -> dict:
        return {"seq": self.seq, "kind": self.kind, "payload": self.payload}


class SessionRecord:
    """In-memory view of one running (or finished) session."""

    def __init__(self, session_id: str, session_dir: str,
                 session: Optional[Session] = None,
                 gate_handler: Optional[QueueGateHandler] = None):
        self.session_id = session_id
        self.session_dir = session_dir
        self.session = session
        self.gate_handler = gate_handler
        self.events: list[SessionEvent] = []
        self.resolved_gates: set[str] = set()
        self.finished = session is None
        self.condition = threading.Condition()
        self.thread: Optional[threading.Thread] = None

    # Called from the session thread for every pipeline event.
    def record(self, kind: str, payload: dict) -> None:
        with self.condition:
            event = SessionEvent(seq=len(self.events) + 1, kind=kind, payload=payload)
            self.events.append(event)
            if kind == "gate_resolved":
                self.resolved_gates.add(payload.get("gate_id", ""))
            self._append_event_log(event)
            self.condition.notify_all()

    def _append_event_log(self, event: SessionEvent) -> None:
        path = os.path.join(self.session_dir, "events.jsonl")
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")

    def mark_finished(self) -> None:
        with self.condition:
            self.finished = True
            self.condition.notify_all()

    def stream(self, from_seq: int) -> Iterator[Optional[SessionEvent]]:
        """Replay events with seq >= from_seq, then follow live until finished.

        Yields None as a keepalive whenever the log is idle, so a consumer that
        disconnects mid-wait can always be unwound at a yield point.
        """
        cursor = 0
        while True:
            with self.condition:
                if cursor >= len(self.events) and not self.finished:
                    self.condition.wait(timeout=0.5)
                if cursor >= len(self.events):
                    if self.finished:
                        return
                    batch = []
                else:
                    batch = self.events[cursor:]
                    cursor = len(self.events)
            if not batch:
                yield None
                continue
            for event in batch:
                if event.seq >= from_seq:
                    yield event

    @classmethod
    def rehydrate(cls, session_id: str, session_dir: str) -> "SessionRecord":
        """Read-only record for a session directory from a previous process."""
        record = cls(session_id, session_dir, session=None)
        path = os.path.join(session_dir, "events.jsonl")
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        data = json.loads(line)
                        record.events.append(SessionEvent(
                            seq=data["seq"], kind=data["kind"], payload=data["payload"]))
        record.resolved_gates = {
            e.payload.get("gate_id", "") for e in record.events if e.kind == "gate_resolved"}
        return record


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def create_app(spool_dir: Optional[str] = None, backend=None, index=None,
               token: Optional[str] = None) -> FastAPI:
    """Build the service app.

    spool_dir: where session directories live (default ``./sessions``).
    token: optional static bearer token required on every /sessions route.
    """
    spool = spool_dir or os.path.join(os.getcwd(), "sessions")
    os.makedirs(spool, exist_ok=True)
    token = token if token is not None else os.environ.get("SF_SERVICE_TOKEN")

    app = FastAPI(title="surveyforge", docs_url=None, redoc_url=None)
    records: dict[str, SessionRecord] = {}
    records_lock = threading.Lock()

    def authorized(request: Request) -> bool:
        if not token:
            return True
        return request.headers.get("authorization") == f"Bearer {token}"

    def lookup(session_id: str) -> SessionRecord:
        with records_lock:
            record = records.get(session_id)
            if record is not None:
                return record
        # Re-hydrate from disk after a service restart.
        session_dir = os.path.join(spool, session_id)
        if os.path.isdir(session_dir):
            record = SessionRecord.rehydrate(session_id, session_dir)
            with records_lock:
                return records.setdefault(session_id, record)
        raise NoSuchSession(session_id)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/sessions", status_code=201)
    async def create_session_endpoint(request: Request):
        if not authorized(request):
            return _error(401, "Unauthorized", "missing or invalid bearer token")
        try:
            body = await request.json()
        except Exception:
            return _error(422, "ValidationError", "request body must be a JSON object")
        if not isinstance(body, dict):
            return _error(422, "ValidationError", "request body must be a JSON object")
        topic = body.get("topic")
        if not isinstance(topic, str) or not topic.strip():
            return _error(422, "ValidationError", "topic must be a non-empty string")
        raw_options = body.get("options") or {}
        if not isinstance(raw_options, dict):
            return _error(422, "ValidationError", "options must be an object")
        uploads = body.get("uploads") or []
        if not isinstance(uploads, list):
            return _error(422, "ValidationError", "uploads must be a list")
        for position, upload in enumerate(uploads, start=1):
            if not isinstance(upload, dict) or not isinstance(upload.get("body"), str) \
                    or not upload["body"].strip():
                return _error(422, "ValidationError",
                              f"upload {position} must carry a non-empty 'body'")

        session_id = uuid.uuid4().hex[:12]
        session_dir = os.path.join(spool, session_id)
        headless = bool(raw_options.get("headless", False))
        known = {"headless", "max_planner_steps", "max_refine_layers",
                 "max_consensus_turns", "max_gate_rejections", "retrieve_limit",
                 "filter_threshold", "target_groups", "insert_figure"}
        unknown = set(raw_options) - known
        if unknown:
            return _error(422, "ValidationError",
                          "unknown options: " + ", ".join(sorted(unknown)))
        options = SessionOptions(
            topic=topic, session_dir=session_dir, uploads=uploads, headless=headless,
            **{k: raw_options[k] for k in known - {"headless"} if k in raw_options})

        gate_handler = HeadlessGateHandler() if headless else QueueGateHandler()
        record = SessionRecord(session_id, session_dir, gate_handler=None if headless else gate_handler)

        from .model import ScriptedBackend

        session = Session(
            options=options,
            backend=backend or ScriptedBackend(),
            index=index,
            gate_handler=gate_handler,
            event_sink=record.record,
        )
        record.session = session
        record.finished = False

        def runner():
            try:
                session.run()
            except Exception:
                pass  # the error event is already in the log
            finally:
                record.mark_finished()

        thread = threading.Thread(target=runner, name=f"session-{session_id}", daemon=True)
        record.thread = thread
        with records_lock:
            records[session_id] = record
        thread.start()
        return {"session_id": session_id}

    @app.get("/sessions/{session_id}/events")
    def stream_events(session_id: str, request: Request):
        if not authorized(request):
            return _error(401, "Unauthorized", "missing or invalid bearer token")
        try:
            from_seq = int(request.query_params.get("from", "0"))
        except ValueError:
            return _error(422, "ValidationError", "'from' must be an integer")
        try:
            record = lookup(session_id)
        except NoSuchSession:
            return _error(404, "NoSuchSession", f"no session {session_id!r}")

        def sse() -> Iterator[str]:
            for event in record.stream(from_seq):
                if event is None:
                    yield ": keepalive\n\n"
                    continue
                data = json.dumps(event.to_dict(), ensure_ascii=False, sort_keys=True)
                yield f"id: {event.seq}\nevent: {event.kind}\ndata: {data}\n\n"

        return StreamingResponse(sse(), media_type="text/event-stream")

    @app.post("/sessions/{session_id}/feedback")
    async def submit_feedback(session_id: str, request: Request):
        if not authorized(request):
            return _error(401, "Unauthorized", "missing or invalid bearer token")
        try:
            record = lookup(session_id)
        except NoSuchSession:
            return _error(404, "NoSuchSession", f"no session {session_id!r}")
        try:
            body = await request.json()
        except Exception:
            return _error(422, "ValidationError", "request body must be a JSON object")
        gate_id = body.get("gate_id") if isinstance(body, dict) else None
        resolution = body.get("resolution") if isinstance(body, dict) else None
        if not isinstance(gate_id, str) or not isinstance(resolution, dict):
            return _error(422, "ValidationError",
                          "body must carry 'gate_id' and 'resolution' {action, text?}")
        action = resolution.get("action")
        if action not in ("approve", "revise", "regenerate", "abandon"):
            return _error(422, "ValidationError",
                          "resolution.action must be approve|revise|regenerate|abandon")
        try:
            _resolve_gate(record, gate_id,
                          GateResolution(action=action, text=str(resolution.get("text", ""))))
        except GateAlreadyResolved as exc:
            return _error(409, "GateAlreadyResolved", str(exc))
        except NoSuchGate as exc:
            return _error(404, "NoSuchGate", str(exc))
        return {"accepted": True, "gate_id": gate_id}

    @app.get("/sessions/{session_id}/artifacts/{kind}")
    def get_artifact(session_id: str, kind: str, request: Request):
        if not authorized(request):
            return _error(401, "Unauthorized", "missing or invalid bearer token")
        try:
            record = lookup(session_id)
        except NoSuchSession:
            return _error(404, "NoSuchSession", f"no session {session_id!r}")
        if kind not in ARTIFACT_KINDS:
            return _error(422, "ValidationError",
                          "artifact kind must be one of " + ", ".join(ARTIFACT_KINDS))
        try:
            path, media_type = _artifact_file(record.session_dir, kind)
        except ArtifactNotReady as exc:
            return _error(409, "ArtifactNotReady", str(exc))
        with open(path, "rb") as fh:
            return Response(content=fh.read(), media_type=media_type)

    return app


def _resolve_gate(record: SessionRecord, gate_id: str, resolution: GateResolution) -> None:
    if gate_id in record.resolved_gates:
        raise GateAlreadyResolved(f"gate {gate_id!r} was already resolved")
    handler = record.gate_handler
    if handler is None:
        raise NoSuchGate(f"session has no pending gate {gate_id!r}")
    pending = handler.pending
    if pending is None or pending.gate_id != gate_id:
        raise NoSuchGate(f"no pending gate {gate_id!r}")
    if not handler.submit(gate_id, resolution):
        raise GateAlreadyResolved(f"gate {gate_id!r} was already resolved")


def _artifact_file(session_dir: str, kind: str) -> tuple[str, str]:
    if kind == "brief":
        path = os.path.join(session_dir, "brief.json")
        media = "application/json"
    elif kind == "tree":
        path = os.path.join(session_dir, "tree.json")
        media = "application/json"
    elif kind == "survey":
        path = os.path.join(session_dir, "survey.md")
        media = "text/markdown; charset=utf-8"
    elif kind == "transcript":
        path = os.path.join(session_dir, "transcript.jsonl")
        media = "application/x-ndjson"
    else:  # skeleton: latest version on disk
        best = None
        if os.path.isdir(session_dir):
            for name in os.listdir(session_dir):
                if name.startswith("skeleton-v") and name.endswith(".json"):
                    try:
                        version = int(name[len("skeleton-v"):-len(".json")])
                    except ValueError:
                        continue
                    if best is None or version > best[0]:
                        best = (version, name)
        if best is None:
            raise ArtifactNotReady("no skeleton written yet")
        return os.path.join(session_dir, best[1]), "application/json"
    if not os.path.exists(path):
        raise ArtifactNotReady(f"artifact {kind!r} not written yet")
    return path, media
