import { afterAll, beforeAll, describe, expect, it } from "vitest";

import {
  ConsoleApi,
  DialogueController,
  applyEvent,
  composeReply,
  dialogueView,
  newSessionView,
  reduceEvents,
  type ConsoleSessionView,
  type FetchFn,
} from "../src/index.js";
import {
  FIXTURE_SESSION_ID,
  fixtureEvents,
  startFixtureServer,
  type FixtureServer,
} from "./helpers/fixture-server.js";

function consensusPendingView(gateId = "gate-open"): ConsoleSessionView {
  return applyEvent(newSessionView(FIXTURE_SESSION_ID), {
    seq: 1,
    kind: "gate_opened",
    payload: { gate_id: gateId, stage: "consensus", payload: { question: "Which angles?", turn: 1 } },
  });
}

describe("dialogueView", () => {
  const events = fixtureEvents();

  it("enables the reply box only while a consensus gate is pending", () => {
    const pending = reduceEvents(FIXTURE_SESSION_ID, events.slice(0, 1));
    const model = dialogueView(pending);
    expect(model.inputEnabled).toBe(true);
    expect(model.pendingGateId).toBe("gate-1");
    expect(model.bubbles.at(-1)?.role).toBe("system");
  });

  it("disables the reply box once the gate resolves", () => {
    const resolved = reduceEvents(FIXTURE_SESSION_ID, events.slice(0, 2));
    const model = dialogueView(resolved);
    expect(model.inputEnabled).toBe(false);
    expect(model.pendingGateId).toBeNull();
  });

  it("keeps the reply box closed for outline gates", () => {
    const outlinePending = reduceEvents(
      FIXTURE_SESSION_ID,
      events.filter((event) => event.seq <= 92),
    );
    expect(outlinePending.pendingGate?.stage).toBe("outline");
    const model = dialogueView(outlinePending);
    expect(model.inputEnabled).toBe(false);
    expect(model.pendingGateId).toBeNull();
  });

  it("renders the same bubbles whether events arrived once or with overlap", () => {
    const straight = reduceEvents(FIXTURE_SESSION_ID, events);
    const overlapped = reduceEvents(
      FIXTURE_SESSION_ID,
      events.slice(35),
      reduceEvents(FIXTURE_SESSION_ID, events.slice(0, 40)),
    );
    expect(dialogueView(overlapped)).toEqual(dialogueView(straight));
  });
});

describe("composeReply", () => {
  it("turns typed text into a revision carrying the text verbatim", () => {
    expect(composeReply("focus on evaluation")).toEqual({ action: "revise", text: "focus on evaluation" });
    expect(composeReply("  keep my spacing  ")).toEqual({ action: "revise", text: "  keep my spacing  " });
  });

  it("treats an empty send as approval", () => {
    expect(composeReply("")).toEqual({ action: "approve" });
    expect(composeReply("   \n\t")).toEqual({ action: "approve" });
  });
});

describe("DialogueController", () => {
  it("refuses to send when no question is waiting", async () => {
    const api = new ConsoleApi({ baseUrl: "http://unused", fetchFn: () => Promise.reject(new Error("no calls")) });
    const controller = new DialogueController(api, FIXTURE_SESSION_ID);
    controller.type("hello");
    const outcome = await controller.send(reduceEvents(FIXTURE_SESSION_ID, fixtureEvents()));
    expect(outcome.sent).toBe(false);
    expect(outcome.draft).toBe("hello");
    expect(outcome.banner).toBe("no question is waiting for a reply");
  });

  it("keeps the draft and raises a banner when the network fails, then clears on success", async () => {
    const calls: Array<{ url: string; body: string }> = [];
    let failures = 1;
    const fetchFn: FetchFn = async (input, init) => {
      calls.push({ url: String(input), body: String(init?.body) });
      if (failures-- > 0) throw new TypeError("fetch failed");
      return new Response(JSON.stringify({ accepted: true, gate_id: "gate-open" }), {
        status: 200,
        headers: { "content-type": "application/json" },
      });
    };
    const api = new ConsoleApi({ baseUrl: "http://svc", fetchFn });
    const controller = new DialogueController(api, FIXTURE_SESSION_ID);
    const view = consensusPendingView();
    controller.type("please add a benchmarks section");

    const failed = await controller.send(view);
    expect(failed.sent).toBe(false);
    expect(failed.draft).toBe("please add a benchmarks section");
    expect(failed.banner).toMatch(/could not send reply, try again/);
    expect(controller.draft).toBe("please add a benchmarks section");

    const succeeded = await controller.send(view);
    expect(succeeded).toEqual({ sent: true, draft: "", banner: null });
    expect(controller.draft).toBe("");
    expect(controller.banner).toBeNull();

    expect(calls).toHaveLength(2);
    expect(calls[1]!.url).toBe(`http://svc/sessions/${FIXTURE_SESSION_ID}/feedback`);
    expect(JSON.parse(calls[1]!.body)).toEqual({
      gate_id: "gate-open",
      resolution: { action: "revise", text: "please add a benchmarks section" },
    });
  });

  it("surfaces server-side rejections without losing the draft", async () => {
    const fetchFn: FetchFn = async () =>
      new Response(JSON.stringify({ code: "GateAlreadyResolved", message: "gate gate-open was already resolved" }), {
        status: 409,
        headers: { "content-type": "application/json" },
      });
    const api = new ConsoleApi({ baseUrl: "http://svc", fetchFn });
    const controller = new DialogueController(api, FIXTURE_SESSION_ID);
    controller.type("too late");
    const outcome = await controller.send(consensusPendingView());
    expect(outcome.sent).toBe(false);
    expect(outcome.draft).toBe("too late");
    expect(outcome.banner).toContain("gate gate-open was already resolved");
  });
});

describe("DialogueController over HTTP", () => {
  let server: FixtureServer;

  beforeAll(async () => {
    server = await startFixtureServer();
  });

  afterAll(async () => {
    await server.close();
  });

  it("delivers the reply body the service expects", async () => {
    const api = new ConsoleApi({ baseUrl: server.baseUrl });
    const controller = new DialogueController(api, FIXTURE_SESSION_ID);
    controller.type("please also cover deployment costs");
    const outcome = await controller.send(consensusPendingView());
    expect(outcome.sent).toBe(true);
    expect(server.feedbackLog()).toEqual([
      { gate_id: "gate-open", resolution: { action: "revise", text: "please also cover deployment costs" } },
    ]);
  });

  it("sends an approval for an empty reply", async () => {
    const api = new ConsoleApi({ baseUrl: server.baseUrl });
    const controller = new DialogueController(api, FIXTURE_SESSION_ID);
    controller.type("");
    const outcome = await controller.send(consensusPendingView());
    expect(outcome.sent).toBe(true);
    expect(server.feedbackLog().at(-1)).toEqual({
      gate_id: "gate-open",
      resolution: { action: "approve" },
    });
  });
});
