/** Consensus dialogue view-model: chat bubbles plus a gated reply box. */

import type { ConsoleApi } from "./api.js";
import type {
  ConsoleSessionView,
  DialogueBubble,
  GateResolutionBody,
} from "./types.js";

export interface DialogueViewModel {
  bubbles: DialogueBubble[];
  /** Reply box usable only while a consensus gate is pending. */
  inputEnabled: boolean;
  pendingGateId: string | null;
}

export function dialogueView(view: ConsoleSessionView): DialogueViewModel {
  const pending = view.pendingGate?.stage === "consensus" ? view.pendingGate : null;
  return {
    bubbles: view.dialogue,
    inputEnabled: pending !== null,
    pendingGateId: pending?.gateId ?? null,
  };
}

/**
 * Map the reply box to a gate resolution: typed text becomes a revision
 * carrying that text verbatim; an empty send approves.
 */
export function composeReply(text: string): GateResolutionBody {
  const trimmed = text.trim();
  return trimmed ? { action: "revise", text } : { action: "approve" };
}

export interface SendOutcome {
  sent: boolean;
  /** Unsent typed text is retained for retry, never dropped. */
  draft: string;
  banner: string | null;
}

/**
 * Holds the operator's draft across network failures: a failed send keeps
 * the text and raises a retry banner instead of losing it.
 */
export class DialogueController {
  draft = "";
  banner: string | null = null;

  constructor(
    private readonly api: ConsoleApi,
    private readonly sessionId: string,
  ) {}

  type(text: string): void {
    this.draft = text;
  }

  async send(view: ConsoleSessionView): Promise<SendOutcome> {
    const model = dialogueView(view);
    if (!model.inputEnabled || model.pendingGateId === null) {
      this.banner = "no question is waiting for a reply";
      return { sent: false, draft: this.draft, banner: this.banner };
    }
    const body = composeReply(this.draft);
    try {
      await this.api.submitFeedback(this.sessionId, model.pendingGateId, body);
    } catch (error) {
      this.banner = `could not send reply, try again: ${(error as Error).message}`;
      return { sent: false, draft: this.draft, banner: this.banner };
    }
    this.draft = "";
    this.banner = null;
    return { sent: true, draft: "", banner: null };
  }
}
