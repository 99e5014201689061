/** Pure event-log reducer: the session view is a fold over pipeline events. */

import type {
  ConsoleSessionView,
  DialogueBubble,
  GateView,
  PipelineEvent,
  Skeleton,
  TimelineRow,
} from "./types.js";

export function newSessionView(sessionId: string): ConsoleSessionView {
  return {
    sessionId,
    stage: "consensus",
    eventCursor: 0,
    pendingGate: null,
    resolvedGates: [],
    skeleton: null,
    dialogue: [],
    timeline: [],
    artifacts: [],
    error: null,
  };
}

function asString(value: unknown): string {
  return typeof value === "string" ? value : JSON.stringify(value ?? "");
}

function timelineText(event: PipelineEvent): string {
  const p = event.payload;
  switch (event.kind) {
    case "stage_changed":
      return `stage → ${asString(p["stage"])}`;
    case "tool_started":
      return `${asString(p["agent"])} calls ${asString(p["tool"])}`;
    case "tool_finished":
      return `${asString(p["tool"])} ${p["ok"] ? "ok" : "failed"}: ${asString(p["summary"])}`;
    case "gate_opened":
      return `gate ${asString(p["gate_id"])} opened (${asString(p["stage"])})`;
    case "gate_resolved":
      return `gate ${asString(p["gate_id"])} resolved: ${asString(p["action"])}`;
    case "artifact_ready":
      return `artifact ready: ${asString(p["name"])}`;
    case "error":
      return `error ${asString(p["error"])}: ${asString(p["message"])}`;
  }
}

/**
 * Apply one event, returning a new view. Events at or below the cursor are
 * ignored, so overlapping re-subscriptions are idempotent.
 */
export function applyEvent(
  view: ConsoleSessionView,
  event: PipelineEvent,
): ConsoleSessionView {
  if (event.seq <= view.eventCursor) return view;

  const next: ConsoleSessionView = {
    ...view,
    eventCursor: event.seq,
    pendingGate: view.pendingGate,
    resolvedGates: [...view.resolvedGates],
    dialogue: [...view.dialogue],
    timeline: [...view.timeline, { seq: event.seq, kind: event.kind, text: timelineText(event) }],
    artifacts: [...view.artifacts],
  };
  const p = event.payload;

  switch (event.kind) {
    case "stage_changed":
      next.stage = asString(p["stage"]);
      break;
    case "gate_opened": {
      const gate: GateView = {
        gateId: asString(p["gate_id"]),
        stage: asString(p["stage"]),
        payload: (p["payload"] ?? {}) as Record<string, unknown>,
      };
      next.pendingGate = gate;
      if (gate.stage === "consensus") {
        const bubble: DialogueBubble = {
          role: "system",
          text: asString(gate.payload["question"]),
          gateId: gate.gateId,
        };
        next.dialogue.push(bubble);
      }
      if (gate.stage === "outline" && gate.payload["skeleton"]) {
        next.skeleton = gate.payload["skeleton"] as unknown as Skeleton;
      }
      break;
    }
    case "gate_resolved": {
      const gateId = asString(p["gate_id"]);
      next.resolvedGates.push(gateId);
      if (next.pendingGate?.gateId === gateId) {
        if (next.pendingGate.stage === "consensus") {
          const action = asString(p["action"]);
          const text = asString(p["text"]);
          next.dialogue.push({
            role: "user",
            text: action === "revise" ? text : action,
            gateId,
          });
        }
        next.pendingGate = null;
      }
      break;
    }
    case "artifact_ready":
      next.artifacts.push(asString(p["name"]));
      break;
    case "error":
      next.error = `${asString(p["error"])}: ${asString(p["message"])}`;
      break;
    case "tool_started":
    case "tool_finished":
      break;
  }
  return next;
}

/** Fold a whole event log into a view. */
export function reduceEvents(
  sessionId: string,
  events: Iterable<PipelineEvent>,
  initial?: ConsoleSessionView,
): ConsoleSessionView {
  let view = initial ?? newSessionView(sessionId);
  for (const event of events) {
    view = applyEvent(view, event);
  }
  return view;
}

/** Parse an ndjson event log (`events.jsonl` content) into events. */
export function parseEventLog(text: string): PipelineEvent[] {
  return text
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => JSON.parse(line) as PipelineEvent);
}
