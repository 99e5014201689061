/** Incremental server-sent-events parsing over any byte stream. */

import type { EventKind, PipelineEvent } from "./types.js";

export interface SseFrame {
  /** `id:` field, when numeric. */
  id: number | null;
  /** `event:` field. */
  event: string | null;
  /** Concatenated `data:` lines. */
  data: string;
}

type ByteSource = AsyncIterable<Uint8Array> | ReadableStream<Uint8Array>;

async function* iterateBytes(source: ByteSource): AsyncGenerator<Uint8Array> {
  if (Symbol.asyncIterator in source) {
    yield* source as AsyncIterable<Uint8Array>;
    return;
  }
  const reader = (source as ReadableStream<Uint8Array>).getReader();
  try {
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return;
      if (value) yield value;
    }
  } finally {
    reader.releaseLock();
  }
}

/**
 * Parse a byte stream into SSE frames, tolerating arbitrary chunk
 * boundaries. Comment frames (keepalives) are silently skipped.
 */
export async function* parseSse(source: ByteSource): AsyncGenerator<SseFrame> {
  const decoder = new TextDecoder();
  let buffer = "";
  for await (const chunk of iterateBytes(source)) {
    buffer += decoder.decode(chunk, { stream: true });
    for (;;) {
      const boundary = buffer.indexOf("\n\n");
      if (boundary < 0) break;
      const block = buffer.slice(0, boundary);
      buffer = buffer.slice(boundary + 2);
      const frame = parseFrame(block);
      if (frame) yield frame;
    }
  }
  const tail = parseFrame(buffer);
  if (tail) yield tail;
}

function parseFrame(block: string): SseFrame | null {
  let id: number | null = null;
  let event: string | null = null;
  const data: string[] = [];
  let sawField = false;
  for (const line of block.split("\n")) {
    if (line === "" || line.startsWith(":")) continue;
    sawField = true;
    if (line.startsWith("id: ")) {
      const parsed = Number(line.slice(4));
      id = Number.isFinite(parsed) ? parsed : null;
    } else if (line.startsWith("event: ")) {
      event = line.slice(7);
    } else if (line.startsWith("data: ")) {
      data.push(line.slice(6));
    }
  }
  if (!sawField) return null;
  return { id, event, data: data.join("\n") };
}

/** Decode one SSE frame into a pipeline event. */
export function frameToEvent(frame: SseFrame): PipelineEvent {
  const parsed = JSON.parse(frame.data) as {
    seq: number;
    kind: EventKind;
    payload: Record<string, unknown>;
  };
  return { seq: parsed.seq, kind: parsed.kind, payload: parsed.payload };
}

/** Parse a whole SSE capture into pipeline events. */
export async function eventsFromBytes(source: ByteSource): Promise<PipelineEvent[]> {
  const events: PipelineEvent[] = [];
  for await (const frame of parseSse(source)) {
    events.push(frameToEvent(frame));
  }
  return events;
}
