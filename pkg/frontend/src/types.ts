/** Wire types of the session service and the console's derived view model. */

export const EVENT_KINDS = [
  "stage_changed",
  "tool_started",
  "tool_finished",
  "gate_opened",
  "gate_resolved",
  "artifact_ready",
  "error",
] as const;

export type EventKind = (typeof EVENT_KINDS)[number];

/** One server-sent pipeline event, exactly as the service emits it. */
export interface PipelineEvent {
  seq: number;
  kind: EventKind;
  payload: Record<string, unknown>;
}

/** A human decision point the pipeline is parked on. */
export interface GateView {
  gateId: string;
  stage: string;
  payload: Record<string, unknown>;
}

export type GateAction = "approve" | "revise" | "regenerate" | "abandon";

export interface GateResolutionBody {
  action: GateAction;
  text?: string;
}

/** Outline node as served in skeleton artifacts and outline gate payloads. */
export interface SkeletonNode {
  node_id: string;
  heading: string;
  intent: string;
  group_refs: string[];
  citation_slots: string[];
  attached_digests: string[];
  children: SkeletonNode[];
}

export interface Skeleton {
  title: string;
  version: number;
  next_node_seq: number;
  nodes: SkeletonNode[];
}

/** One line of the recorded execution journal (transcript artifact). */
export interface TranscriptEntry {
  seq: number;
  agent_id: string;
  tool_name: string;
  args_hash: string;
  ok: boolean;
  result_summary: string;
  timestamp: number;
}

export interface DialogueBubble {
  role: "system" | "user";
  text: string;
  gateId: string;
}

export interface TimelineRow {
  seq: number;
  kind: EventKind;
  text: string;
}

/**
 * Everything the console shows for one session tab. Rebuilt purely from the
 * event stream plus artifact fetches; no client-side invented state.
 */
export interface ConsoleSessionView {
  sessionId: string;
  stage: string;
  eventCursor: number;
  pendingGate: GateView | null;
  resolvedGates: string[];
  skeleton: Skeleton | null;
  dialogue: DialogueBubble[];
  timeline: TimelineRow[];
  artifacts: string[];
  error: string | null;
}

export const ARTIFACT_KINDS = ["brief", "tree", "skeleton", "survey", "transcript"] as const;

export type ArtifactKind = (typeof ARTIFACT_KINDS)[number];
