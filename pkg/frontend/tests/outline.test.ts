import { describe, expect, it } from "vitest";

import {
  OutlineEditor,
  decodeStatedOrder,
  encodeReorderDelta,
  outlineRows,
  type Skeleton,
  type SkeletonNode,
} from "../src/index.js";
import { readFixture } from "./helpers/fixture-server.js";

const fixtureSkeleton = (): Skeleton => JSON.parse(readFixture("skeleton.json").toString("utf-8")) as Skeleton;

const HEADINGS = [
  "Introduction",
  "Tool Workflows",
  "Instruction Tuning",
  "Retrieval Augmented",
  "Conclusion and Outlook",
];

/** Independent oracle: plain array arithmetic for a 1-based move. */
function movedOrder(before: string[], from: number, to: number): string[] {
  const after = [...before];
  const [item] = after.splice(from - 1, 1);
  after.splice(to - 1, 0, item!);
  return after;
}

describe("outlineRows", () => {
  it("lists the recorded skeleton in document order", () => {
    const rows = outlineRows(fixtureSkeleton());
    expect(rows.map((row) => row.nodeId)).toEqual(["n1", "n2", "n3", "n4", "n5"]);
    expect(rows.map((row) => row.heading)).toEqual(HEADINGS);
    expect(rows.every((row) => row.depth === 0)).toBe(true);
    expect(rows.every((row) => row.intent.length > 0)).toBe(true);
  });

  it("walks nested children parents-first with increasing depth", () => {
    const node = (nodeId: string, heading: string, children: SkeletonNode[] = []): SkeletonNode => ({
      node_id: nodeId,
      heading,
      intent: "",
      group_refs: [],
      citation_slots: [],
      attached_digests: [],
      children,
    });
    const nested: Skeleton = {
      title: "t",
      version: 1,
      next_node_seq: 5,
      nodes: [node("a", "A", [node("a1", "A1"), node("a2", "A2")]), node("b", "B")],
    };
    const rows = outlineRows(nested);
    expect(rows.map((row) => [row.nodeId, row.depth])).toEqual([
      ["a", 0],
      ["a1", 1],
      ["a2", 1],
      ["b", 0],
    ]);
  });
});

describe("encodeReorderDelta", () => {
  it("round-trips every possible single move through its stated order", () => {
    for (let from = 1; from <= HEADINGS.length; from += 1) {
      for (let to = 1; to <= HEADINGS.length; to += 1) {
        if (from === to) continue;
        const clause = encodeReorderDelta(HEADINGS, from, to);
        expect(decodeStatedOrder(clause)).toEqual(movedOrder(HEADINGS, from, to));
      }
    }
  });

  it("names both affected sections and the direction of the move", () => {
    const clause = encodeReorderDelta(HEADINGS, 3, 2);
    expect(clause).toContain('move section 3 ("Instruction Tuning") before section 2 ("Tool Workflows")');
    const down = encodeReorderDelta(HEADINGS, 2, 4);
    expect(down).toContain('move section 2 ("Tool Workflows") after section 4 ("Retrieval Augmented")');
  });

  it("states the complete resulting order, numbered from one", () => {
    const clause = encodeReorderDelta(HEADINGS, 1, 5);
    expect(clause).toContain(
      "resulting order: 1. Tool Workflows; 2. Instruction Tuning; 3. Retrieval Augmented; " +
        "4. Conclusion and Outlook; 5. Introduction",
    );
  });

  it("rejects out-of-range positions and no-op moves", () => {
    expect(() => encodeReorderDelta(HEADINGS, 0, 2)).toThrow(/within 1\.\.5/);
    expect(() => encodeReorderDelta(HEADINGS, 2, 6)).toThrow(/within 1\.\.5/);
    expect(() => encodeReorderDelta(HEADINGS, 4, 4)).toThrow(/did not move/);
  });
});

describe("OutlineEditor", () => {
  it("tracks consecutive moves against the evolving order", () => {
    const editor = new OutlineEditor(fixtureSkeleton());
    editor.moveSection(3, 2);
    expect(editor.currentOrder).toEqual(movedOrder(HEADINGS, 3, 2));
    editor.moveSection(5, 1);
    expect(editor.currentOrder).toEqual(movedOrder(movedOrder(HEADINGS, 3, 2), 5, 1));
    expect(editor.hasEdits).toBe(true);
  });

  it("compiles all edits into one revise resolution", () => {
    const editor = new OutlineEditor(fixtureSkeleton());
    const move = editor.moveSection(4, 3);
    const rename = editor.renameSection(1, "Overview");
    const resolution = editor.reviseResolution();
    expect(resolution.action).toBe("revise");
    expect(resolution.text).toBe(`${move}; then ${rename}`);
    expect(resolution.text).toContain('rename section 1 from "Introduction" to "Overview"');
  });

  it("refuses to submit a revision without edits", () => {
    const editor = new OutlineEditor(fixtureSkeleton());
    expect(editor.hasEdits).toBe(false);
    expect(() => editor.reviseResolution()).toThrow(/no edits/);
    expect(editor.approveResolution()).toEqual({ action: "approve" });
    expect(editor.regenerateResolution()).toEqual({ action: "regenerate" });
  });

  it("locks once the gate resolves, explaining why edits are rejected", () => {
    const editor = new OutlineEditor(fixtureSkeleton());
    editor.moveSection(2, 3);
    editor.lock();
    expect(editor.locked).toBe(true);
    expect(() => editor.moveSection(1, 2)).toThrow(/already resolved/);
    expect(() => editor.renameSection(1, "X")).toThrow(/already resolved/);
    expect(() => editor.reviseResolution()).toThrow(/already resolved/);
    expect(() => editor.approveResolution()).toThrow(/already resolved/);
  });

  it("validates rename positions", () => {
    const editor = new OutlineEditor(fixtureSkeleton());
    expect(() => editor.renameSection(0, "X")).toThrow(/within 1\.\.5/);
    expect(() => editor.renameSection(6, "X")).toThrow(/within 1\.\.5/);
  });
});
