/** HTTP client for the session service. The console talks only to this API. */

import { frameToEvent, parseSse } from "./sse.js";
import type {
  ArtifactKind,
  GateResolutionBody,
  PipelineEvent,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.code = code;
  }
}

export type FetchFn = typeof fetch;

export interface ConsoleApiOptions {
  baseUrl: string;
  token?: string;
  fetchFn?: FetchFn;
  /** Reconnect attempts for a dropped event stream (per silence). */
  maxReconnects?: number;
}

export interface SessionCreate {
  topic: string;
  options?: Record<string, unknown>;
  uploads?: Array<{ filename: string; body: string }>;
}

async function errorFrom(response: Response): Promise<ApiError> {
  let code = "HttpError";
  let message = `${response.status} ${response.statusText}`;
  try {
    const body = (await response.json()) as { code?: string; message?: string };
    if (body.code) code = body.code;
    if (body.message) message = body.message;
  } catch {
    // non-JSON error body; keep the status line
  }
  return new ApiError(response.status, code, message);
}

export class ConsoleApi {
  private readonly baseUrl: string;
  private readonly fetchFn: FetchFn;
  private readonly token: string | undefined;
  private readonly maxReconnects: number;

  constructor(options: ConsoleApiOptions) {
    this.baseUrl = options.baseUrl.replace(/\/$/, "");
    this.fetchFn = options.fetchFn ?? fetch;
    this.token = options.token;
    this.maxReconnects = options.maxReconnects ?? 5;
  }

  private headers(json: boolean): Record<string, string> {
    const headers: Record<string, string> = {};
    if (json) headers["content-type"] = "application/json";
    if (this.token) headers["authorization"] = `Bearer ${this.token}`;
    return headers;
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!response.ok) throw await errorFrom(response);
    return response;
  }

  async healthz(): Promise<void> {
    await this.request("/healthz", { headers: this.headers(false) });
  }

  async createSession(body: SessionCreate): Promise<string> {
    const response = await this.request("/sessions", {
      method: "POST",
      headers: this.headers(true),
      body: JSON.stringify(body),
    });
    const created = (await response.json()) as { session_id: string };
    return created.session_id;
  }

  async submitFeedback(
    sessionId: string,
    gateId: string,
    resolution: GateResolutionBody,
  ): Promise<void> {
    await this.request(`/sessions/${sessionId}/feedback`, {
      method: "POST",
      headers: this.headers(true),
      body: JSON.stringify({ gate_id: gateId, resolution }),
    });
  }

  artifactUrl(sessionId: string, kind: ArtifactKind): string {
    return `${this.baseUrl}/sessions/${sessionId}/artifacts/${kind}`;
  }

  async artifactBytes(sessionId: string, kind: ArtifactKind): Promise<Uint8Array> {
    const response = await this.request(`/sessions/${sessionId}/artifacts/${kind}`, {
      headers: this.headers(false),
    });
    return new Uint8Array(await response.arrayBuffer());
  }

  async artifactText(sessionId: string, kind: ArtifactKind): Promise<string> {
    const response = await this.request(`/sessions/${sessionId}/artifacts/${kind}`, {
      headers: this.headers(false),
    });
    return response.text();
  }

  async artifactJson<T>(sessionId: string, kind: ArtifactKind): Promise<T> {
    const response = await this.request(`/sessions/${sessionId}/artifacts/${kind}`, {
      headers: this.headers(false),
    });
    return (await response.json()) as T;
  }

  /**
   * Subscribe to the session's event stream from a cursor.
   *
   * One logical subscription: a dropped connection resumes from the last
   * seen seq, and overlapping replays are deduplicated, so consumers see
   * each event exactly once in order. The generator ends when a fresh
   * subscription delivers nothing new — the log is complete.
   */
  async *events(sessionId: string, from = 1): AsyncGenerator<PipelineEvent> {
    let cursor = from - 1;
    let reconnects = 0;
    for (;;) {
      let delivered = false;
      let dropped = false;
      let response: Response;
      try {
        response = await this.request(
          `/sessions/${sessionId}/events?from=${cursor + 1}`,
          { headers: this.headers(false) },
        );
      } catch (error) {
        if (error instanceof ApiError) throw error;
        if (++reconnects > this.maxReconnects) throw error;
        continue;
      }
      if (!response.body) throw new ApiError(502, "EmptyBody", "event stream had no body");
      try {
        for await (const frame of parseSse(response.body)) {
          const event = frameToEvent(frame);
          if (event.seq <= cursor) continue;
          cursor = event.seq;
          delivered = true;
          yield event;
        }
      } catch {
        dropped = true; // connection lost mid-stream: resume from the cursor
      }
      if (delivered) reconnects = 0;
      if (dropped) {
        if (++reconnects > this.maxReconnects) {
          throw new ApiError(504, "StreamLost", "event stream kept dropping");
        }
        continue;
      }
      if (delivered) continue; // clean close: confirm nothing further remains
      return; // clean close with nothing new: the log is complete
    }
  }
}
