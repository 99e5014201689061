import { createHash } from "node:crypto";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import {
  ConsoleApi,
  decodeStatedOrder,
  encodeReorderDelta,
  monitorView,
  newSessionView,
  outlineRows,
  parseEventLog,
  reduceEvents,
  applyEvent,
  type ConsoleSessionView,
} from "../src/index.js";
import {
  FIXTURE_SESSION_ID,
  readFixture,
  startFixtureServer,
  type FixtureServer,
} from "./helpers/fixture-server.js";

function sha256(bytes: Uint8Array): string {
  return createHash("sha256").update(bytes).digest("hex");
}

describe("console replay fidelity", () => {
  let server: FixtureServer;
  let api: ConsoleApi;
  let live: ConsoleSessionView;
  let replayed: ConsoleSessionView;

  beforeAll(async () => {
    // a lossy live feed: tiny chunks and one connection cut mid-stream
    server = await startFixtureServer({ chunkSize: 11, dropAfterFrames: 43, dropTimes: 1 });
    api = new ConsoleApi({ baseUrl: server.baseUrl });

    live = newSessionView(FIXTURE_SESSION_ID);
    for await (const event of api.events(FIXTURE_SESSION_ID)) {
      live = applyEvent(live, event);
    }
    expect(server.streamRequests()).toBeGreaterThanOrEqual(2);

    replayed = reduceEvents(
      FIXTURE_SESSION_ID,
      parseEventLog(readFixture("events.jsonl").toString("utf-8")),
    );
  });

  afterAll(async () => {
    await server.close();
  });

  it("rebuilds the identical view from the recorded event log", () => {
    expect(replayed).toEqual(live);
  });

  it("matches row counts between replayed and live rendering", () => {
    expect(replayed.timeline.length).toBe(live.timeline.length);
    expect(monitorView(replayed).rows.length).toBe(monitorView(live).rows.length);
    expect(replayed.artifacts.length).toBe(live.artifacts.length);
    expect(replayed.resolvedGates).toEqual(live.resolvedGates);
  });

  it("matches the conversation transcript text exactly", () => {
    expect(replayed.dialogue.map((bubble) => [bubble.role, bubble.text])).toEqual(
      live.dialogue.map((bubble) => [bubble.role, bubble.text]),
    );
    expect(replayed.timeline.map((row) => row.text)).toEqual(live.timeline.map((row) => row.text));
  });

  it("matches the outline tree order", () => {
    expect(live.skeleton).not.toBeNull();
    expect(replayed.skeleton).not.toBeNull();
    const liveRows = outlineRows(live.skeleton!);
    const replayedRows = outlineRows(replayed.skeleton!);
    expect(replayedRows.map((row) => row.nodeId)).toEqual(liveRows.map((row) => row.nodeId));
    expect(replayedRows.map((row) => [row.heading, row.depth])).toEqual(
      liveRows.map((row) => [row.heading, row.depth]),
    );
  });

  it("passes the reorder-edit delta encoder's unit oracle on the live outline", () => {
    const headings = outlineRows(live.skeleton!)
      .filter((row) => row.depth === 0)
      .map((row) => row.heading);
    expect(headings.length).toBeGreaterThanOrEqual(3);
    for (let from = 1; from <= headings.length; from += 1) {
      for (let to = 1; to <= headings.length; to += 1) {
        if (from === to) continue;
        const stated = decodeStatedOrder(encodeReorderDelta(headings, from, to));
        const oracle = [...headings];
        const [moved] = oracle.splice(from - 1, 1);
        oracle.splice(to - 1, 0, moved!);
        expect(stated).toEqual(oracle);
      }
    }
  });

  it("downloads a survey whose checksum equals the service artifact", async () => {
    const downloaded = await api.artifactBytes(FIXTURE_SESSION_ID, "survey");
    const serviceArtifact = readFixture("survey.md");
    expect(sha256(downloaded)).toBe(sha256(serviceArtifact));
    expect(downloaded.byteLength).toBe(serviceArtifact.byteLength);
  });
});
