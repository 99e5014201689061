/** Outline review: tree rows plus an editor that compiles edits into a
 * textual revision for the pipeline to apply — the planner stays in the
 * loop; the console never mutates the skeleton directly. */

import type { GateResolutionBody, Skeleton, SkeletonNode } from "./types.js";

export interface OutlineRow {
  nodeId: string;
  heading: string;
  intent: string;
  depth: number;
}

/** Document-order rows of the outline tree (parents before children). */
export function outlineRows(skeleton: Skeleton): OutlineRow[] {
  const rows: OutlineRow[] = [];
  const walk = (nodes: SkeletonNode[], depth: number): void => {
    for (const node of nodes) {
      rows.push({ nodeId: node.node_id, heading: node.heading, intent: node.intent, depth });
      walk(node.children ?? [], depth + 1);
    }
  };
  walk(skeleton.nodes, 0);
  return rows;
}

function numberedOrder(headings: string[]): string {
  return headings.map((heading, i) => `${i + 1}. ${heading}`).join("; ");
}

/**
 * Describe one drag of a top-level section as a revision clause naming both
 * affected headings and ending with the complete resulting order.
 * `from`/`to` are 1-based positions; `before` is the order prior to the drag.
 */
export function encodeReorderDelta(before: string[], from: number, to: number): string {
  if (from < 1 || from > before.length || to < 1 || to > before.length) {
    throw new Error(`section positions must be within 1..${before.length}`);
  }
  if (from === to) throw new Error("section did not move");
  const moved = before[from - 1]!;
  const anchor = before[to - 1]!;
  const after = [...before];
  after.splice(from - 1, 1);
  after.splice(to - 1, 0, moved);
  const direction = to < from ? "before" : "after";
  return (
    `move section ${from} ("${moved}") ${direction} section ${to} ("${anchor}"); ` +
    `resulting order: ${numberedOrder(after)}`
  );
}

/** Recover the target order stated by a reorder clause (round-trip oracle). */
export function decodeStatedOrder(clause: string): string[] {
  const marker = "resulting order: ";
  const at = clause.lastIndexOf(marker);
  if (at < 0) return [];
  return clause
    .slice(at + marker.length)
    .split("; ")
    .map((entry) => entry.replace(/^\d+\.\s*/, ""));
}

/**
 * Editing session for one pending outline gate. All edits accumulate into
 * one revise(text) resolution; a resolved gate locks the editor.
 */
export class OutlineEditor {
  private order: string[];
  private readonly clauses: string[] = [];
  private lockedReason: string | null = null;

  constructor(skeleton: Skeleton) {
    this.order = skeleton.nodes.map((node) => node.heading);
  }

  get currentOrder(): string[] {
    return [...this.order];
  }

  get locked(): boolean {
    return this.lockedReason !== null;
  }

  get hasEdits(): boolean {
    return this.clauses.length > 0;
  }

  /** Called when the gate resolves (by this console or any other client). */
  lock(reason = "the outline gate is already resolved; editing is closed"): void {
    this.lockedReason = reason;
  }

  private guard(): void {
    if (this.lockedReason) throw new Error(this.lockedReason);
  }

  /** Drag one top-level section from 1-based position `from` to `to`. */
  moveSection(from: number, to: number): string {
    this.guard();
    const clause = encodeReorderDelta(this.order, from, to);
    const moved = this.order.splice(from - 1, 1)[0]!;
    this.order.splice(to - 1, 0, moved);
    this.clauses.push(clause);
    return clause;
  }

  /** Edit a section heading in place. */
  renameSection(position: number, heading: string): string {
    this.guard();
    if (position < 1 || position > this.order.length) {
      throw new Error(`section positions must be within 1..${this.order.length}`);
    }
    const previous = this.order[position - 1]!;
    this.order[position - 1] = heading;
    const clause = `rename section ${position} from "${previous}" to "${heading}"`;
    this.clauses.push(clause);
    return clause;
  }

  /** The accumulated edits as one revision resolution. */
  reviseResolution(): GateResolutionBody {
    this.guard();
    if (!this.hasEdits) throw new Error("no edits to submit");
    return { action: "revise", text: this.clauses.join("; then ") };
  }

  approveResolution(): GateResolutionBody {
    this.guard();
    return { action: "approve" };
  }

  regenerateResolution(): GateResolutionBody {
    this.guard();
    return { action: "regenerate" };
  }
}
